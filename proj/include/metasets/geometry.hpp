#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metasets/rng.hpp"

namespace metasets {

using Point3 = Eigen::Vector3d;

struct PointCloud {
  std::vector<Point3> points;
  int label = 0;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.label == b.label && a.points == b.points;
  }
};

enum class TransformKind {
  // Leaves the cloud unchanged. Used for ablations and as a control task.
  kIdentity,
  // Non-uniform density, static parameter: gate g > 1.
  kDensity,
  // Nearest-x% dropping, static parameter: percentage 0 < x < 100.
  kDropping,
  // Self-occlusion by grid projection, static parameter: cell size W > 0.
  kOcclusion,
};

std::string to_string(TransformKind kind);
// Accepts "identity", "density", "dropping", "occlusion".
TransformKind parse_transform_kind(const std::string& name);

// One parameterized transformation. Only the static parameter is stored;
// the anchor / direction is drawn fresh on every application.
class TransformSpec {
 public:
  static TransformSpec identity();
  static TransformSpec density(double gate);
  static TransformSpec dropping(double percent);
  static TransformSpec occlusion(double grid_size);
  // Dispatches to the factory above; `value` is ignored for kIdentity.
  static TransformSpec make(TransformKind kind, double value);

  TransformKind kind() const { return kind_; }
  double value() const { return value_; }

  std::string describe() const;

  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;

 private:
  TransformSpec(TransformKind kind, double value) : kind_(kind), value_(value) {}

  TransformKind kind_;
  double value_;
};

// Centers on the centroid and scales so the farthest point has norm 1.
// Throws InvalidInput on an empty cloud and Degenerate if all points coincide.
PointCloud normalize_unit_ball(const PointCloud& cloud);

// Uniform direction on the unit sphere.
Point3 sample_unit_sphere(Rng& rng);

// Drops point i with probability min(1, gate * r_i), where r_i is the
// min-max normalized distance from `anchor`. The closest point is never
// dropped. Returns nullopt if nothing survives.
std::optional<PointCloud> transform_density(const PointCloud& cloud, const Point3& anchor,
                                            double gate, Rng& rng);

// Number of points removed by transform_dropping: round-half-up of n*x/100.
std::size_t dropping_count(std::size_t n, double percent);

// Removes the dropping_count(n, percent) points closest to
// points[anchor_index] (lower index first on equal distance).
PointCloud transform_dropping(const PointCloud& cloud, std::size_t anchor_index, double percent);

// Orthonormal in-plane axes (u, w) completing `direction` to a right-handed frame.
std::pair<Point3, Point3> occlusion_basis(const Point3& direction);

// Projects onto the plane normal to `direction`, bins the projections into
// square cells of side `grid_size` anchored at the projected bounding-box
// minimum, and keeps the point of minimum depth p.direction in each cell.
PointCloud transform_occlusion(const PointCloud& cloud, const Point3& direction, double grid_size);

// Maximum number of density redraws before falling back to the input cloud.
inline constexpr int kDensityRetries = 16;

// Draws the dynamic parameter for `spec` and applies it.
PointCloud apply_transform(const TransformSpec& spec, const PointCloud& cloud, Rng& rng);

}  // namespace metasets
