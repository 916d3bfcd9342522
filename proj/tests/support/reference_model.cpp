#include "reference_model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metasets::testing {
namespace {

constexpr std::size_t kWidths[] = {3, 64, 128, 256, 128};

double relu(double x) { return x > 0.0 ? x : 0.0; }

double softmax_ce(const std::vector<double>& logits, int label) {
  double m = logits[0];
  for (double l : logits) m = std::max(m, l);
  double s = 0.0;
  for (double l : logits) s += std::exp(l - m);
  return std::log(s) + m - logits[static_cast<std::size_t>(label)];
}

}  // namespace

ReferenceModel::ReferenceModel(std::span<const double> flat, std::size_t class_count)
    : classes_(class_count) {
  std::size_t pos = 0;
  for (std::size_t l = 0; l < 5; ++l) {
    const std::size_t in = kWidths[l];
    const std::size_t out = l + 1 < 5 ? kWidths[l + 1] : class_count;
    w_.emplace_back(in, std::vector<double>(out));
    for (std::size_t i = 0; i < in; ++i) {
      for (std::size_t o = 0; o < out; ++o) w_[l][i][o] = flat[pos++];
    }
    b_.emplace_back(out);
    for (std::size_t o = 0; o < out; ++o) b_[l][o] = flat[pos++];
  }
  if (pos != flat.size()) throw std::invalid_argument("flat parameter size mismatch");
}

std::vector<double> ReferenceModel::logits(const PointCloud& cloud) const {
  std::vector<double> pooled(256, 0.0);
  bool first = true;
  for (const auto& p : cloud.points) {
    std::vector<double> act = {p.x(), p.y(), p.z()};
    for (std::size_t l = 0; l < 3; ++l) {
      std::vector<double> next(b_[l]);
      for (std::size_t i = 0; i < act.size(); ++i) {
        for (std::size_t o = 0; o < next.size(); ++o) next[o] += act[i] * w_[l][i][o];
      }
      for (double& v : next) v = relu(v);
      act = std::move(next);
    }
    for (std::size_t o = 0; o < 256; ++o) pooled[o] = first ? act[o] : std::max(pooled[o], act[o]);
    first = false;
  }
  std::vector<double> act = pooled;
  for (std::size_t l = 3; l < 5; ++l) {
    std::vector<double> next(b_[l]);
    for (std::size_t i = 0; i < act.size(); ++i) {
      for (std::size_t o = 0; o < next.size(); ++o) next[o] += act[i] * w_[l][i][o];
    }
    if (l == 3) {
      for (double& v : next) v = relu(v);
    }
    act = std::move(next);
  }
  return act;
}

double ReferenceModel::loss(std::span<const PointCloud> batch) const {
  double total = 0.0;
  for (const auto& cloud : batch) total += softmax_ce(logits(cloud), cloud.label);
  return total / static_cast<double>(batch.size());
}

PerturbationOracle::PerturbationOracle(std::span<const double> flat, std::size_t class_count,
                                       std::span<const PointCloud> batch)
    : model_(flat, class_count), batch_(batch.begin(), batch.end()), flat_(flat.begin(), flat.end()) {
  for (std::size_t l = 0; l < 5; ++l) {
    const std::size_t in = kWidths[l];
    const std::size_t out = l + 1 < 5 ? kWidths[l + 1] : class_count;
    for (std::size_t i = 0; i < in; ++i) {
      for (std::size_t o = 0; o < out; ++o) index_.push_back({l, i, o, false});
    }
    for (std::size_t o = 0; o < out; ++o) index_.push_back({l, 0, o, true});
  }

  const auto& w = model_.w_;
  const auto& b = model_.b_;
  for (const auto& cloud : batch_) {
    Cache c;
    for (const auto& p : cloud.points) {
      const double x[3] = {p.x(), p.y(), p.z()};
      std::vector<double> h1p(b[0]);
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t o = 0; o < 64; ++o) h1p[o] += x[i] * w[0][i][o];
      std::vector<double> h1(64);
      for (std::size_t o = 0; o < 64; ++o) h1[o] = relu(h1p[o]);
      std::vector<double> h2p(b[1]);
      for (std::size_t i = 0; i < 64; ++i)
        for (std::size_t o = 0; o < 128; ++o) h2p[o] += h1[i] * w[1][i][o];
      std::vector<double> h2(128);
      for (std::size_t o = 0; o < 128; ++o) h2[o] = relu(h2p[o]);
      std::vector<double> h3p(b[2]);
      for (std::size_t i = 0; i < 128; ++i)
        for (std::size_t o = 0; o < 256; ++o) h3p[o] += h2[i] * w[2][i][o];
      c.h1_pre.push_back(h1p);
      c.h1.push_back(h1);
      c.h2_pre.push_back(h2p);
      c.h2.push_back(h2);
      c.h3_pre.push_back(h3p);
    }
    c.pooled.assign(256, 0.0);
    c.argmax.assign(256, -1);
    for (std::size_t o = 0; o < 256; ++o) {
      for (std::size_t p = 0; p < c.h3_pre.size(); ++p) {
        if (c.h3_pre[p][o] > c.pooled[o]) {
          c.pooled[o] = c.h3_pre[p][o];
          c.argmax[o] = static_cast<long>(p);
        }
      }
    }
    c.z_pre = b[3];
    for (std::size_t i = 0; i < 256; ++i)
      for (std::size_t o = 0; o < 128; ++o) c.z_pre[o] += c.pooled[i] * w[3][i][o];
    c.z.resize(128);
    for (std::size_t o = 0; o < 128; ++o) c.z[o] = relu(c.z_pre[o]);
    c.logits = b[4];
    for (std::size_t i = 0; i < 128; ++i)
      for (std::size_t o = 0; o < class_count; ++o) c.logits[o] += c.z[i] * w[4][i][o];
    caches_.push_back(std::move(c));
  }
  for (std::size_t k = 0; k < batch_.size(); ++k) {
    base_loss_ += softmax_ce(caches_[k].logits, batch_[k].label);
  }
  base_loss_ /= static_cast<double>(batch_.size());
}

double PerturbationOracle::cloud_loss(const Cache&, const std::vector<double>& logits,
                                      int label) const {
  return softmax_ce(logits, label);
}

double PerturbationOracle::loss_for_cloud(std::size_t k, const Slot& s, double value,
                                          bool& crossed) const {
  const Cache& c = caches_[k];
  const auto& w = model_.w_;
  const auto& b = model_.b_;
  const std::size_t classes = model_.classes_;
  const int label = batch_[k].label;
  const std::size_t n = c.h1.size();
  auto weight = [&](std::size_t l, std::size_t i, std::size_t o) {
    return (s.layer == l && !s.bias && s.in == i && s.out == o) ? value : w[l][i][o];
  };
  auto bias = [&](std::size_t l, std::size_t o) {
    return (s.layer == l && s.bias && s.out == o) ? value : b[l][o];
  };
  auto logits_from_z = [&](const std::vector<double>& z) {
    std::vector<double> out(classes);
    for (std::size_t o = 0; o < classes; ++o) {
      double acc = bias(4, o);
      for (std::size_t i = 0; i < 128; ++i) acc += z[i] * weight(4, i, o);
      out[o] = acc;
    }
    return out;
  };
  auto z_from_pooled_delta = [&](const std::vector<double>& pooled) {
    std::vector<double> z_pre = c.z_pre;
    for (std::size_t i = 0; i < 256; ++i) {
      const double d = pooled[i] - c.pooled[i];
      if (d == 0.0) continue;
      for (std::size_t o = 0; o < 128; ++o) z_pre[o] += d * w[3][i][o];
    }
    std::vector<double> z(128);
    for (std::size_t o = 0; o < 128; ++o) {
      z[o] = relu(z_pre[o]);
      if ((z_pre[o] > 0.0) != (c.z_pre[o] > 0.0)) crossed = true;
    }
    return z;
  };
  // Max over points with the ReLU floor; flags a change of the winning point.
  auto pool_unit = [&](std::size_t o, auto&& pre_of) {
    double m = 0.0;
    long arg = -1;
    for (std::size_t p = 0; p < n; ++p) {
      const double v = pre_of(p);
      if (v > m) {
        m = v;
        arg = static_cast<long>(p);
      }
    }
    if (arg != c.argmax[o]) crossed = true;
    return m;
  };
  auto pool = [&](const std::vector<std::vector<double>>& h3_pre) {
    std::vector<double> pooled(256);
    for (std::size_t o = 0; o < 256; ++o) {
      pooled[o] = pool_unit(o, [&](std::size_t p) { return h3_pre[p][o]; });
    }
    return pooled;
  };
  auto check_sign = [&](double before, double after) {
    if ((before > 0.0) != (after > 0.0)) crossed = true;
  };

  switch (s.layer) {
    case 4:
      return cloud_loss(c, logits_from_z(c.z), label);
    case 3: {
      // Only z[j] changes.
      const std::size_t j = s.out;
      double acc = bias(3, j);
      for (std::size_t i = 0; i < 256; ++i) acc += c.pooled[i] * weight(3, i, j);
      std::vector<double> z = c.z;
      z[j] = relu(acc);
      check_sign(c.z_pre[j], acc);
      return cloud_loss(c, logits_from_z(z), label);
    }
    case 2: {
      // Only feature j of the pooled vector changes.
      const std::size_t j = s.out;
      std::vector<double> pooled = c.pooled;
      pooled[j] = pool_unit(j, [&](std::size_t p) {
        double acc = bias(2, j);
        for (std::size_t i = 0; i < 128; ++i) acc += c.h2[p][i] * weight(2, i, j);
        return acc;
      });
      return cloud_loss(c, logits_from_z(z_from_pooled_delta(pooled)), label);
    }
    case 1: {
      // Column j of h2 changes; propagate its change into every layer-3 unit.
      const std::size_t j = s.out;
      auto h3_pre = c.h3_pre;
      for (std::size_t p = 0; p < n; ++p) {
        double acc = bias(1, j);
        for (std::size_t i = 0; i < 64; ++i) acc += c.h1[p][i] * weight(1, i, j);
        check_sign(c.h2_pre[p][j], acc);
        const double d = relu(acc) - c.h2[p][j];
        if (d == 0.0) continue;
        for (std::size_t o = 0; o < 256; ++o) h3_pre[p][o] += d * w[2][j][o];
      }
      return cloud_loss(c, logits_from_z(z_from_pooled_delta(pool(h3_pre))), label);
    }
    case 0: {
      // Column j of h1 changes; recompute h2 and h3 rows from there.
      const std::size_t j = s.out;
      std::vector<std::vector<double>> h3_pre = c.h3_pre;
      for (std::size_t p = 0; p < n; ++p) {
        const double x[3] = {batch_[k].points[p].x(), batch_[k].points[p].y(),
                             batch_[k].points[p].z()};
        double acc = bias(0, j);
        for (std::size_t i = 0; i < 3; ++i) acc += x[i] * weight(0, i, j);
        check_sign(c.h1_pre[p][j], acc);
        const double d1 = relu(acc) - c.h1[p][j];
        if (d1 == 0.0) continue;
        std::vector<double> h2(128);
        for (std::size_t o = 0; o < 128; ++o) {
          const double pre = c.h2_pre[p][o] + d1 * w[1][j][o];
          check_sign(c.h2_pre[p][o], pre);
          h2[o] = relu(pre);
        }
        std::vector<double> row(b[2]);
        for (std::size_t i = 0; i < 128; ++i)
          for (std::size_t o = 0; o < 256; ++o) row[o] += h2[i] * w[2][i][o];
        h3_pre[p] = std::move(row);
      }
      return cloud_loss(c, logits_from_z(z_from_pooled_delta(pool(h3_pre))), label);
    }
  }
  throw std::logic_error("bad layer");
}

double PerturbationOracle::loss_with(std::size_t flat_index, double value) const {
  bool crossed = false;
  return loss_with(flat_index, value, crossed);
}

double PerturbationOracle::loss_with(std::size_t flat_index, double value, bool& crossed) const {
  const Slot& s = index_.at(flat_index);
  double total = 0.0;
  for (std::size_t k = 0; k < batch_.size(); ++k) total += loss_for_cloud(k, s, value, crossed);
  return total / static_cast<double>(batch_.size());
}

double PerturbationOracle::central_difference(std::size_t flat_index, double h) const {
  const double theta = flat_[flat_index];
  return (loss_with(flat_index, theta + h) - loss_with(flat_index, theta - h)) / (2.0 * h);
}

PerturbationOracle::Difference PerturbationOracle::region_central_difference(
    std::size_t flat_index, double h, double min_h) const {
  const double theta = flat_[flat_index];
  while (true) {
    bool crossed = false;
    const double up = loss_with(flat_index, theta + h, crossed);
    const double down = loss_with(flat_index, theta - h, crossed);
    if (!crossed || h <= min_h) return {(up - down) / (2.0 * h), h, !crossed};
    h /= 10.0;
  }
}

}  // namespace metasets::testing
