#include "metasets/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metasets/error.hpp"

namespace metasets::nn {
namespace {

static_assert(sizeof(Point3) == 3 * sizeof(double), "points must pack as xyz triples");

constexpr std::size_t kPooledWidth = ModelShape::kHiddenWidths[3];

// out[r][j] = bias[j] + sum_k in[r][k] * w[k][j], for `rows` rows.
//
// Each row is accumulated in the same order no matter which tile it lands
// in, so a point's features do not depend on its position in the cloud.
// Zero inputs (common after ReLU) are skipped; adding 0*w is exact anyway.
void dense_rows(const double* __restrict in, std::size_t rows, std::size_t in_dim,
                const double* __restrict w, const double* __restrict bias, std::size_t out_dim,
                double* __restrict out, bool relu) {
  constexpr std::size_t kTile = 4;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    const std::size_t tile = std::min(kTile, rows - r0);
    for (std::size_t t = 0; t < tile; ++t) {
      std::copy(bias, bias + out_dim, out + (r0 + t) * out_dim);
    }
    for (std::size_t k = 0; k < in_dim; ++k) {
      const double* __restrict wk = w + k * out_dim;
      for (std::size_t t = 0; t < tile; ++t) {
        const double a = in[(r0 + t) * in_dim + k];
        if (a == 0.0) continue;
        double* __restrict o = out + (r0 + t) * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) o[j] += a * wk[j];
      }
    }
    if (relu) {
      for (std::size_t t = 0; t < tile; ++t) {
        double* o = out + (r0 + t) * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) o[j] = o[j] > 0.0 ? o[j] : 0.0;
      }
    }
  }
}

// Activations of one cloud that the backward pass needs.
struct CloudPass {
  std::size_t point_count = 0;
  std::vector<double> h1;  // P x 64, post-ReLU
  std::vector<double> h2;  // P x 128, post-ReLU
  std::vector<double> pre_max;  // 256: max over points of the layer-3 pre-activation
  std::vector<std::uint32_t> argmax;  // 256: lowest point index attaining pre_max
  std::vector<double> pooled;  // 256: ReLU(pre_max)
  std::vector<double> z;  // 128: head hidden, post-ReLU
  std::vector<double> logits;
};

const double* raw_points(const PointCloud& cloud) { return cloud.points.front().data(); }

void run_forward(const ModelParams& params, const PointCloud& cloud, CloudPass& pass) {
  if (cloud.empty()) throw InvalidInput("forward needs a non-empty cloud");
  const ModelShape& s = params.shape();
  const std::size_t n = cloud.size();
  const std::size_t w1 = s.out_dim(0), w2 = s.out_dim(1), w3 = s.out_dim(2);
  pass.point_count = n;
  pass.h1.resize(n * w1);
  pass.h2.resize(n * w2);
  dense_rows(raw_points(cloud), n, 3, params.weight(0).data(), params.bias(0).data(), w1,
             pass.h1.data(), true);
  dense_rows(pass.h1.data(), n, w1, params.weight(1).data(), params.bias(1).data(), w2,
             pass.h2.data(), true);

  pass.pre_max.assign(w3, 0.0);
  pass.argmax.assign(w3, 0);
  constexpr std::size_t kTile = 8;
  double buffer[kTile * kPooledWidth];
  for (std::size_t r0 = 0; r0 < n; r0 += kTile) {
    const std::size_t tile = std::min(kTile, n - r0);
    dense_rows(pass.h2.data() + r0 * w2, tile, w2, params.weight(2).data(), params.bias(2).data(),
               w3, buffer, false);
    for (std::size_t t = 0; t < tile; ++t) {
      const double* row = buffer + t * w3;
      const auto index = static_cast<std::uint32_t>(r0 + t);
      for (std::size_t j = 0; j < w3; ++j) {
        if (index == 0 || row[j] > pass.pre_max[j]) {
          pass.pre_max[j] = row[j];
          pass.argmax[j] = index;
        }
      }
    }
  }
  pass.pooled.resize(w3);
  for (std::size_t j = 0; j < w3; ++j) pass.pooled[j] = pass.pre_max[j] > 0.0 ? pass.pre_max[j] : 0.0;

  pass.z.resize(s.out_dim(3));
  dense_rows(pass.pooled.data(), 1, w3, params.weight(3).data(), params.bias(3).data(),
             s.out_dim(3), pass.z.data(), true);
  pass.logits.resize(s.class_count);
  dense_rows(pass.z.data(), 1, s.out_dim(3), params.weight(4).data(), params.bias(4).data(),
             s.class_count, pass.logits.data(), false);
}

// Accumulates d(loss)/d(params) for one cloud given d(loss)/d(logits).
void run_backward(const ModelParams& params, const PointCloud& cloud, const CloudPass& pass,
                  std::span<const double> dlogits, Gradients& grad, std::vector<double>& dh2,
                  std::vector<char>& active) {
  const ModelShape& s = params.shape();
  const std::size_t c = s.class_count;
  const std::size_t w1 = s.out_dim(0), w2 = s.out_dim(1), w3 = s.out_dim(2), w4 = s.out_dim(3);

  // Head output layer.
  {
    auto dw = grad.weight(4);
    auto db = grad.bias(4);
    for (std::size_t j = 0; j < c; ++j) db[j] += dlogits[j];
    for (std::size_t k = 0; k < w4; ++k) {
      if (pass.z[k] == 0.0) continue;
      for (std::size_t j = 0; j < c; ++j) dw[k * c + j] += pass.z[k] * dlogits[j];
    }
  }
  std::vector<double> dz(w4, 0.0);
  {
    auto w = params.weight(4);
    for (std::size_t k = 0; k < w4; ++k) {
      if (!(pass.z[k] > 0.0)) continue;
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) acc += w[k * c + j] * dlogits[j];
      dz[k] = acc;
    }
  }
  // Head hidden layer.
  std::vector<double> dpooled(w3, 0.0);
  {
    auto dw = grad.weight(3);
    auto db = grad.bias(3);
    auto w = params.weight(3);
    for (std::size_t j = 0; j < w4; ++j) db[j] += dz[j];
    for (std::size_t k = 0; k < w3; ++k) {
      const double a = pass.pooled[k];
      double acc = 0.0;
      for (std::size_t j = 0; j < w4; ++j) {
        if (a != 0.0) dw[k * w4 + j] += a * dz[j];
        acc += w[k * w4 + j] * dz[j];
      }
      dpooled[k] = acc;
    }
  }

  // Max-pool routes each feature's gradient to its argmax point only.
  const std::size_t n = pass.point_count;
  dh2.assign(n * w2, 0.0);
  active.assign(n, 0);
  {
    auto dw = grad.weight(2);
    auto db = grad.bias(2);
    auto w = params.weight(2);
    for (std::size_t j = 0; j < w3; ++j) {
      if (!(pass.pre_max[j] > 0.0)) continue;
      const double g = dpooled[j];
      if (g == 0.0) continue;
      const std::size_t p = pass.argmax[j];
      active[p] = 1;
      db[j] += g;
      const double* h2p = pass.h2.data() + p * w2;
      double* dh2p = dh2.data() + p * w2;
      for (std::size_t k = 0; k < w2; ++k) {
        dw[k * w3 + j] += h2p[k] * g;
        dh2p[k] += w[k * w3 + j] * g;
      }
    }
  }

  std::vector<double> dpre2(w2), dpre1(w1);
  auto dw2 = grad.weight(1);
  auto db2 = grad.bias(1);
  auto weight2 = params.weight(1);
  auto dw1 = grad.weight(0);
  auto db1 = grad.bias(0);
  const double* xyz = raw_points(cloud);
  for (std::size_t p = 0; p < n; ++p) {
    if (!active[p]) continue;
    const double* h1p = pass.h1.data() + p * w1;
    const double* h2p = pass.h2.data() + p * w2;
    const double* dh2p = dh2.data() + p * w2;
    for (std::size_t k = 0; k < w2; ++k) dpre2[k] = h2p[k] > 0.0 ? dh2p[k] : 0.0;
    for (std::size_t k = 0; k < w2; ++k) db2[k] += dpre2[k];
    for (std::size_t i = 0; i < w1; ++i) {
      const double a = h1p[i];
      const double* wi = weight2.data() + i * w2;
      double* dwi = dw2.data() + i * w2;
      double acc = 0.0;
      for (std::size_t k = 0; k < w2; ++k) {
        dwi[k] += a * dpre2[k];
        acc += wi[k] * dpre2[k];
      }
      dpre1[i] = a > 0.0 ? acc : 0.0;
    }
    for (std::size_t i = 0; i < w1; ++i) db1[i] += dpre1[i];
    for (std::size_t d = 0; d < 3; ++d) {
      const double x = xyz[p * 3 + d];
      for (std::size_t i = 0; i < w1; ++i) dw1[d * w1 + i] += x * dpre1[i];
    }
  }
}

void check_batch(const ModelParams& params, std::span<const PointCloud> batch) {
  if (batch.empty()) throw InvalidInput("batch must be non-empty");
  const auto c = static_cast<int>(params.shape().class_count);
  for (const auto& cloud : batch) {
    if (cloud.label < 0 || cloud.label >= c) {
      throw InvalidInput("label " + std::to_string(cloud.label) + " outside [0, " +
                         std::to_string(c) + ")");
    }
    if (cloud.empty()) throw InvalidInput("batch contains an empty cloud");
  }
}

}  // namespace

std::size_t ModelShape::weight_offset(std::size_t layer) const {
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layer; ++l) offset += (in_dim(l) + 1) * out_dim(l);
  return offset;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

ModelParams init_params(std::size_t class_count, Rng& rng) {
  if (class_count < 2) throw InvalidInput("class_count must be >= 2");
  ModelParams params(ModelShape{class_count});
  for (std::size_t l = 0; l < ModelShape::kLayerCount; ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(params.shape().in_dim(l)));
    for (double& w : params.weight(l)) w = rng.uniform(-bound, bound);
  }
  return params;
}

ModelParams init_params(std::size_t class_count, std::uint64_t seed) {
  Rng rng(seed);
  return init_params(class_count, rng);
}

std::vector<double> forward(const ModelParams& params, const PointCloud& cloud) {
  CloudPass pass;
  run_forward(params, cloud, pass);
  return pass.logits;
}

std::vector<double> pooled_feature(const ModelParams& params, const PointCloud& cloud) {
  CloudPass pass;
  run_forward(params, cloud, pass);
  return pass.pooled;
}

std::vector<double> point_feature(const ModelParams& params, const Point3& point) {
  const ModelShape& s = params.shape();
  std::vector<double> h1(s.out_dim(0)), h2(s.out_dim(1)), h3(s.out_dim(2));
  dense_rows(point.data(), 1, 3, params.weight(0).data(), params.bias(0).data(), h1.size(),
             h1.data(), true);
  dense_rows(h1.data(), 1, h1.size(), params.weight(1).data(), params.bias(1).data(), h2.size(),
             h2.data(), true);
  dense_rows(h2.data(), 1, h2.size(), params.weight(2).data(), params.bias(2).data(), h3.size(),
             h3.data(), true);
  return h3;
}

double cross_entropy(std::span<const double> logits, int label) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - m);
  return m + std::log(sum) - logits[static_cast<std::size_t>(label)];
}

double loss_batch(const ModelParams& params, std::span<const PointCloud> batch) {
  return evaluate(params, batch).mean_loss;
}

LossAndGrad loss_and_grad(const ModelParams& params, std::span<const PointCloud> batch) {
  check_batch(params, batch);
  const std::size_t c = params.shape().class_count;
  const double scale = 1.0 / static_cast<double>(batch.size());

  LossAndGrad out{.loss = 0.0, .grad = Gradients(params.shape())};
  CloudPass pass;
  std::vector<double> dlogits(c), dh2;
  std::vector<char> active;
  double total = 0.0;
  for (const auto& cloud : batch) {
    run_forward(params, cloud, pass);
    total += cross_entropy(pass.logits, cloud.label);
    const double m = *std::max_element(pass.logits.begin(), pass.logits.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      dlogits[j] = std::exp(pass.logits[j] - m);
      sum += dlogits[j];
    }
    for (std::size_t j = 0; j < c; ++j) {
      dlogits[j] = (dlogits[j] / sum - (static_cast<int>(j) == cloud.label ? 1.0 : 0.0)) * scale;
    }
    run_backward(params, cloud, pass, dlogits, out.grad, dh2, active);
  }
  out.loss = total * scale;
  return out;
}

BatchEval evaluate(const ModelParams& params, std::span<const PointCloud> batch) {
  check_batch(params, batch);
  BatchEval out;
  out.predictions.reserve(batch.size());
  CloudPass pass;
  double total = 0.0;
  for (const auto& cloud : batch) {
    run_forward(params, cloud, pass);
    total += cross_entropy(pass.logits, cloud.label);
    const auto best = static_cast<int>(
        std::max_element(pass.logits.begin(), pass.logits.end()) - pass.logits.begin());
    out.predictions.push_back(best);
    if (best == cloud.label) ++out.correct;
  }
  out.mean_loss = total / static_cast<double>(batch.size());
  return out;
}

ModelParams sgd_step(const ModelParams& params, const Gradients& grads, double lr) {
  if (!(params.shape() == grads.shape())) throw InvalidInput("gradient shape mismatch");
  ModelParams out = params;
  auto theta = out.values();
  auto g = grads.values();
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g[i];
  return out;
}

AdamState AdamState::zeros(const ModelShape& shape) {
  return AdamState{.first = Moments(shape), .second = Moments(shape)};
}

AdamResult adam_step(const AdamState& state, const ModelParams& params, const Gradients& grads,
                     double lr) {
  if (!(params.shape() == grads.shape()) || !(state.first.shape() == params.shape()) ||
      !(state.second.shape() == params.shape())) {
    throw InvalidInput("Adam state, parameters and gradients must share a shape");
  }
  AdamResult out{.state = state, .params = params};
  out.state.step += 1;
  const double t = static_cast<double>(out.state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto m = out.state.first.values();
  auto v = out.state.second.values();
  auto theta = out.params.values();
  auto g = grads.values();
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
    v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
  }
  return out;
}

}  // namespace metasets::nn
