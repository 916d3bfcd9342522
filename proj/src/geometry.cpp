#include "metasets/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "metasets/error.hpp"

namespace metasets {

std::string to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::kIdentity:
      return "identity";
    case TransformKind::kDensity:
      return "density";
    case TransformKind::kDropping:
      return "dropping";
    case TransformKind::kOcclusion:
      return "occlusion";
  }
  return "unknown";
}

TransformKind parse_transform_kind(const std::string& name) {
  if (name == "identity") return TransformKind::kIdentity;
  if (name == "density") return TransformKind::kDensity;
  if (name == "dropping") return TransformKind::kDropping;
  if (name == "occlusion") return TransformKind::kOcclusion;
  throw InvalidInput("unknown transform kind '" + name + "'");
}

TransformSpec TransformSpec::identity() { return {TransformKind::kIdentity, 0.0}; }

TransformSpec TransformSpec::density(double gate) {
  if (!(gate > 1.0) || !std::isfinite(gate)) {
    throw InvalidInput("density gate must be finite and > 1");
  }
  return {TransformKind::kDensity, gate};
}

TransformSpec TransformSpec::dropping(double percent) {
  if (!(percent > 0.0 && percent < 100.0)) {
    throw InvalidInput("drop ratio must lie in (0, 100)");
  }
  return {TransformKind::kDropping, percent};
}

TransformSpec TransformSpec::occlusion(double grid_size) {
  if (!(grid_size > 0.0) || !std::isfinite(grid_size)) {
    throw InvalidInput("occlusion grid size must be finite and > 0");
  }
  return {TransformKind::kOcclusion, grid_size};
}

TransformSpec TransformSpec::make(TransformKind kind, double value) {
  switch (kind) {
    case TransformKind::kIdentity:
      return identity();
    case TransformKind::kDensity:
      return density(value);
    case TransformKind::kDropping:
      return dropping(value);
    case TransformKind::kOcclusion:
      return occlusion(value);
  }
  throw InvalidInput("unknown transform kind");
}

std::string TransformSpec::describe() const {
  std::ostringstream out;
  out << to_string(kind_);
  switch (kind_) {
    case TransformKind::kIdentity:
      break;
    case TransformKind::kDensity:
      out << "(g=" << value_ << ")";
      break;
    case TransformKind::kDropping:
      out << "(x=" << value_ << "%)";
      break;
    case TransformKind::kOcclusion:
      out << "(W=" << value_ << ")";
      break;
  }
  return out.str();
}

PointCloud normalize_unit_ball(const PointCloud& cloud) {
  if (cloud.empty()) throw InvalidInput("cannot normalize an empty cloud");

  Point3 centroid = Point3::Zero();
  for (const auto& p : cloud.points) centroid += p;
  centroid /= static_cast<double>(cloud.size());

  PointCloud out{.points = {}, .label = cloud.label};
  out.points.reserve(cloud.size());
  double max_norm = 0.0;
  for (const auto& p : cloud.points) {
    out.points.push_back(p - centroid);
    max_norm = std::max(max_norm, out.points.back().norm());
  }
  if (!(max_norm > 0.0) || !std::isfinite(max_norm)) {
    throw Degenerate("cloud has zero extent; cannot scale to the unit ball");
  }
  for (auto& p : out.points) p /= max_norm;
  return out;
}

Point3 sample_unit_sphere(Rng& rng) {
  while (true) {
    Point3 v(rng.normal(), rng.normal(), rng.normal());
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

std::optional<PointCloud> transform_density(const PointCloud& cloud, const Point3& anchor,
                                            double gate, Rng& rng) {
  if (!(gate > 1.0)) throw InvalidInput("density gate must be > 1");
  if (cloud.empty()) throw InvalidInput("density transform needs a non-empty cloud");

  std::vector<double> dist(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) dist[i] = (cloud.points[i] - anchor).norm();
  const auto [min_it, max_it] = std::minmax_element(dist.begin(), dist.end());
  const double lo = *min_it;
  const double span = *max_it - lo;

  PointCloud out{.points = {}, .label = cloud.label};
  out.points.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    // Every point consumes one draw so the stream position is independent
    // of which points survive.
    const double u = rng.uniform();
    const double basic_rate = span > 0.0 ? (dist[i] - lo) / span : 0.0;
    const double drop_prob = std::min(1.0, gate * basic_rate);
    if (!(u < drop_prob)) out.points.push_back(cloud.points[i]);
  }
  if (out.empty()) return std::nullopt;
  return out;
}

std::size_t dropping_count(std::size_t n, double percent) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * percent / 100.0 + 0.5));
}

PointCloud transform_dropping(const PointCloud& cloud, std::size_t anchor_index, double percent) {
  if (!(percent > 0.0 && percent < 100.0)) throw InvalidInput("drop ratio must lie in (0, 100)");
  const std::size_t n = cloud.size();
  if (n < 2) throw InvalidInput("dropping needs at least 2 points");
  if (anchor_index >= n) throw InvalidInput("dropping anchor index out of range");
  const std::size_t m = dropping_count(n, percent);
  if (m >= n) throw InvalidInput("drop ratio would remove every point");
  if (m == 0) return cloud;

  const Point3& anchor = cloud.points[anchor_index];
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) dist[i] = (cloud.points[i] - anchor).squaredNorm();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto closer = [&](std::size_t a, std::size_t b) {
    return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
  };
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m - 1), order.end(),
                   closer);
  std::vector<bool> removed(n, false);
  for (std::size_t r = 0; r < m; ++r) removed[order[r]] = true;

  PointCloud out{.points = {}, .label = cloud.label};
  out.points.reserve(n - m);
  for (std::size_t i = 0; i < n; ++i) {
    if (!removed[i]) out.points.push_back(cloud.points[i]);
  }
  return out;
}

std::pair<Point3, Point3> occlusion_basis(const Point3& direction) {
  // Helper axis: the coordinate axis least aligned with the direction.
  Eigen::Index axis = 0;
  direction.cwiseAbs().minCoeff(&axis);
  Point3 helper = Point3::Zero();
  helper[axis] = 1.0;
  Point3 u = (helper - helper.dot(direction) * direction).normalized();
  Point3 w = direction.cross(u);
  return {u, w};
}

PointCloud transform_occlusion(const PointCloud& cloud, const Point3& direction, double grid_size) {
  if (!(grid_size > 0.0)) throw InvalidInput("occlusion grid size must be > 0");
  if (std::abs(direction.norm() - 1.0) > 1e-9) {
    throw InvalidInput("occlusion direction must be a unit vector");
  }
  if (cloud.empty()) return cloud;

  const auto [u, w] = occlusion_basis(direction);
  struct Cell {
    double a, b, depth;
    std::size_t index;
  };
  // Grid anchored at the in-plane bounding-box minimum, so a cell larger
  // than the cloud's extent holds every point.
  double a_min = std::numeric_limits<double>::infinity();
  double b_min = a_min;
  for (const auto& p : cloud.points) {
    a_min = std::min(a_min, p.dot(u));
    b_min = std::min(b_min, p.dot(w));
  }
  std::vector<Cell> cells(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Point3& p = cloud.points[i];
    cells[i] = {std::floor((p.dot(u) - a_min) / grid_size),
                std::floor((p.dot(w) - b_min) / grid_size), p.dot(direction), i};
  }
  std::sort(cells.begin(), cells.end(), [](const Cell& x, const Cell& y) {
    if (x.a != y.a) return x.a < y.a;
    if (x.b != y.b) return x.b < y.b;
    if (x.depth != y.depth) return x.depth < y.depth;
    return x.index < y.index;
  });

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i == 0 || cells[i].a != cells[i - 1].a || cells[i].b != cells[i - 1].b) {
      kept.push_back(cells[i].index);
    }
  }
  std::sort(kept.begin(), kept.end());

  PointCloud out{.points = {}, .label = cloud.label};
  out.points.reserve(kept.size());
  for (std::size_t i : kept) out.points.push_back(cloud.points[i]);
  return out;
}

PointCloud apply_transform(const TransformSpec& spec, const PointCloud& cloud, Rng& rng) {
  if (cloud.empty()) throw InvalidInput("cannot transform an empty cloud");
  switch (spec.kind()) {
    case TransformKind::kIdentity:
      return cloud;
    case TransformKind::kDensity: {
      for (int attempt = 0; attempt < kDensityRetries; ++attempt) {
        const Point3 anchor = sample_unit_sphere(rng);
        if (auto out = transform_density(cloud, anchor, spec.value(), rng)) return *std::move(out);
      }
      std::cerr << "warning: " << spec.describe() << " emptied the cloud " << kDensityRetries
                << " times; using the input unchanged\n";
      return cloud;
    }
    case TransformKind::kDropping: {
      if (cloud.size() < 2 || dropping_count(cloud.size(), spec.value()) >= cloud.size()) {
        return cloud;
      }
      const std::size_t anchor = rng.uniform_index(cloud.size());
      return transform_dropping(cloud, anchor, spec.value());
    }
    case TransformKind::kOcclusion:
      return transform_occlusion(cloud, sample_unit_sphere(rng), spec.value());
  }
  throw InvalidInput("unknown transform kind");
}

}  // namespace metasets
