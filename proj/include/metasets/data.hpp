#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metasets/geometry.hpp"
#include "metasets/rng.hpp"

namespace metasets::data {

enum class Split { kSource, kTrain, kVal, kTarget };

std::string to_string(Split split);
Split parse_split(const std::string& name);

struct Dataset {
  std::vector<PointCloud> items;
  std::vector<std::string> class_names;
  Split split = Split::kSource;

  std::size_t class_count() const { return class_names.size(); }
  std::vector<std::size_t> class_histogram() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

enum class ShapeKind { kSphere, kCube, kCylinder, kCone, kTorus };

std::string to_string(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& name);

// Per-instance jitter of one parametric surface family. `aspect` scales the
// family's secondary dimension: box height, cylinder/cone height, torus tube
// radius. The sphere ignores it.
struct ShapeFamily {
  ShapeKind kind = ShapeKind::kSphere;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double aspect_min = 1.0;
  double aspect_max = 1.0;

  static ShapeFamily defaults(ShapeKind kind);
  void validate() const;
};

// All five families with their default jitter, in enum order.
std::vector<ShapeFamily> default_families();

inline constexpr std::size_t kMinPointsPerCloud = 64;

// Area-uniform samples on the canonical (unscaled, unrotated) surface of
// `kind` with the given aspect. The sphere has radius 1 about the origin.
std::vector<Point3> sample_surface(ShapeKind kind, double aspect, std::size_t count, Rng& rng);

// `per_class` clouds of `points` points for each family: surface samples,
// random aspect, scale and heading, then unit-ball normalization.
Dataset generate_synthetic_dataset(std::span<const ShapeFamily> families, std::size_t per_class,
                                   std::size_t points, std::uint64_t seed);

// Stratified 5:1 train/validation split. The total validation count is
// floor(size / 6), apportioned over classes by largest remainder; a class
// too small for a share still gets one validation item.
std::pair<Dataset, Dataset> split_train_val(const Dataset& dataset, std::uint64_t seed);

// Held-out geometry shift: occlusion, then dropping, each optional.
struct TargetShift {
  std::optional<double> occlusion_grid;
  std::optional<double> drop_percent;
};

// Applies `shift` with fresh random direction/anchor per cloud. Throws
// InvalidInput if a shift parameter coincides with a training transform of
// the same kind. Labels are preserved; clouds are not re-normalized.
Dataset build_target_domain(const Dataset& source, const TargetShift& shift,
                            std::span<const TransformSpec> training_transforms, std::uint64_t seed);

}  // namespace metasets::data
