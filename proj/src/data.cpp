#include "metasets/data.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <numeric>

#include "metasets/error.hpp"

namespace metasets::data {
namespace {

constexpr double kPi = std::numbers::pi;

Point3 sample_box(double hz, Rng& rng) {
  constexpr double hx = 1.0, hy = 1.0;
  const double area_z = hx * hy, area_y = hx * hz, area_x = hy * hz;
  const double pick = rng.uniform() * (area_x + area_y + area_z);
  const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double s = rng.uniform(-1.0, 1.0), t = rng.uniform(-1.0, 1.0);
  if (pick < area_z) return {s * hx, t * hy, sign * hz};
  if (pick < area_z + area_y) return {s * hx, sign * hy, t * hz};
  return {sign * hx, s * hy, t * hz};
}

Point3 sample_disk(double z, Rng& rng) {
  const double r = std::sqrt(rng.uniform());
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  return {r * std::cos(phi), r * std::sin(phi), z};
}

Point3 sample_cylinder(double half_height, Rng& rng) {
  const double side = 4.0 * kPi * half_height;
  const double cap = kPi;
  const double pick = rng.uniform() * (side + 2.0 * cap);
  if (pick < side) {
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    return {std::cos(phi), std::sin(phi), rng.uniform(-half_height, half_height)};
  }
  return sample_disk(pick < side + cap ? half_height : -half_height, rng);
}

Point3 sample_cone(double half_height, Rng& rng) {
  const double slant = std::sqrt(1.0 + 4.0 * half_height * half_height);
  const double lateral = kPi * slant;
  const double base = kPi;
  if (rng.uniform() * (lateral + base) < lateral) {
    // Radius grows linearly from the apex, so area density needs sqrt.
    const double t = std::sqrt(rng.uniform());
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    return {t * std::cos(phi), t * std::sin(phi), half_height - 2.0 * half_height * t};
  }
  return sample_disk(-half_height, rng);
}

Point3 sample_torus(double tube, Rng& rng) {
  constexpr double ring = 1.0;
  while (true) {
    const double theta = rng.uniform(0.0, 2.0 * kPi);
    const double phi = rng.uniform(0.0, 2.0 * kPi);
    // Area element is proportional to (R + r cos theta).
    if (rng.uniform() * (ring + tube) < ring + tube * std::cos(theta)) {
      const double radial = ring + tube * std::cos(theta);
      return {radial * std::cos(phi), radial * std::sin(phi), tube * std::sin(theta)};
    }
  }
}

}  // namespace

std::string to_string(Split split) {
  switch (split) {
    case Split::kSource:
      return "source";
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTarget:
      return "target";
  }
  return "unknown";
}

Split parse_split(const std::string& name) {
  for (auto s : {Split::kSource, Split::kTrain, Split::kVal, Split::kTarget}) {
    if (to_string(s) == name) return s;
  }
  throw InvalidInput("unknown split '" + name + "'");
}

std::vector<std::size_t> Dataset::class_histogram() const {
  std::vector<std::size_t> counts(class_count(), 0);
  for (const auto& item : items) {
    if (item.label >= 0 && static_cast<std::size_t>(item.label) < counts.size()) {
      ++counts[static_cast<std::size_t>(item.label)];
    }
  }
  return counts;
}

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::kSphere:
      return "sphere";
    case ShapeKind::kCube:
      return "cube";
    case ShapeKind::kCylinder:
      return "cylinder";
    case ShapeKind::kCone:
      return "cone";
    case ShapeKind::kTorus:
      return "torus";
  }
  return "unknown";
}

ShapeKind parse_shape_kind(const std::string& name) {
  for (auto k : {ShapeKind::kSphere, ShapeKind::kCube, ShapeKind::kCylinder, ShapeKind::kCone,
                 ShapeKind::kTorus}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidInput("unknown shape family '" + name + "'");
}

ShapeFamily ShapeFamily::defaults(ShapeKind kind) {
  ShapeFamily f{.kind = kind};
  switch (kind) {
    case ShapeKind::kSphere:
      break;
    case ShapeKind::kCube:
      f.aspect_min = 0.6;
      f.aspect_max = 1.4;
      break;
    case ShapeKind::kCylinder:
      f.aspect_min = 0.5;
      f.aspect_max = 1.5;
      break;
    case ShapeKind::kCone:
      f.aspect_min = 0.5;
      f.aspect_max = 1.5;
      break;
    case ShapeKind::kTorus:
      f.aspect_min = 0.2;
      f.aspect_max = 0.5;
      break;
  }
  return f;
}

void ShapeFamily::validate() const {
  if (!(scale_min > 0.0 && scale_min <= scale_max)) {
    throw InvalidInput(to_string(kind) + ": scale range must be positive and ordered");
  }
  if (!(aspect_min > 0.0 && aspect_min <= aspect_max)) {
    throw InvalidInput(to_string(kind) + ": aspect range must be positive and ordered");
  }
  if (kind == ShapeKind::kTorus && !(aspect_max < 1.0)) {
    throw InvalidInput("torus tube radius must stay below the ring radius");
  }
}

std::vector<ShapeFamily> default_families() {
  std::vector<ShapeFamily> out;
  for (auto k : {ShapeKind::kSphere, ShapeKind::kCube, ShapeKind::kCylinder, ShapeKind::kCone,
                 ShapeKind::kTorus}) {
    out.push_back(ShapeFamily::defaults(k));
  }
  return out;
}

std::vector<Point3> sample_surface(ShapeKind kind, double aspect, std::size_t count, Rng& rng) {
  std::vector<Point3> points;
  points.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    switch (kind) {
      case ShapeKind::kSphere:
        points.push_back(sample_unit_sphere(rng));
        break;
      case ShapeKind::kCube:
        points.push_back(sample_box(aspect, rng));
        break;
      case ShapeKind::kCylinder:
        points.push_back(sample_cylinder(aspect, rng));
        break;
      case ShapeKind::kCone:
        points.push_back(sample_cone(aspect, rng));
        break;
      case ShapeKind::kTorus:
        points.push_back(sample_torus(aspect, rng));
        break;
    }
  }
  return points;
}

Dataset generate_synthetic_dataset(std::span<const ShapeFamily> families, std::size_t per_class,
                                   std::size_t points, std::uint64_t seed) {
  if (families.size() < 2) throw InvalidInput("need at least two shape families");
  if (per_class < 1) throw InvalidInput("per-class count must be >= 1");
  if (points < kMinPointsPerCloud) {
    throw InvalidInput("clouds need at least " + std::to_string(kMinPointsPerCloud) + " points");
  }
  for (const auto& f : families) f.validate();

  Rng rng(seed);
  Dataset out;
  out.items.reserve(families.size() * per_class);
  for (std::size_t c = 0; c < families.size(); ++c) {
    const ShapeFamily& family = families[c];
    out.class_names.push_back(to_string(family.kind));
    for (std::size_t i = 0; i < per_class; ++i) {
      const double aspect = rng.uniform(family.aspect_min, family.aspect_max);
      const double scale = rng.uniform(family.scale_min, family.scale_max);
      const double yaw = rng.uniform(0.0, 2.0 * kPi);
      const Eigen::Matrix3d rotation = Eigen::AngleAxisd(yaw, Point3::UnitZ()).toRotationMatrix();
      PointCloud cloud{.points = sample_surface(family.kind, aspect, points, rng),
                       .label = static_cast<int>(c)};
      for (auto& p : cloud.points) p = rotation * (scale * p);
      out.items.push_back(normalize_unit_ball(cloud));
    }
  }
  return out;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& dataset, std::uint64_t seed) {
  const std::size_t total = dataset.items.size();
  if (total < 6) throw InvalidInput("a 5:1 split needs at least 6 items");
  const std::size_t classes = dataset.class_count();

  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < total; ++i) {
    const int label = dataset.items[i].label;
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw InvalidInput("item label outside the class list");
    }
    members[static_cast<std::size_t>(label)].push_back(i);
  }

  // Largest-remainder apportionment of floor(total / 6) validation slots.
  std::vector<std::size_t> val_count(classes);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    const double quota = static_cast<double>(members[c].size()) / 6.0;
    val_count[c] = static_cast<std::size_t>(std::floor(quota));
    assigned += val_count[c];
    remainders.emplace_back(quota - std::floor(quota), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total / 6 && r < remainders.size(); ++r) {
    ++val_count[remainders[r].second];
    ++assigned;
  }
  for (std::size_t c = 0; c < classes; ++c) {
    if (members[c].size() < 6) {
      std::cerr << "warning: class '" << dataset.class_names[c] << "' has only "
                << members[c].size() << " items\n";
      if (val_count[c] == 0 && members[c].size() >= 2) val_count[c] = 1;
    }
  }

  Rng rng(seed);
  std::vector<char> is_val(total, 0);
  for (std::size_t c = 0; c < classes; ++c) {
    auto& idx = members[c];
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    for (std::size_t v = 0; v < val_count[c]; ++v) is_val[idx[v]] = 1;
  }

  Dataset train{.items = {}, .class_names = dataset.class_names, .split = Split::kTrain};
  Dataset val{.items = {}, .class_names = dataset.class_names, .split = Split::kVal};
  for (std::size_t i = 0; i < total; ++i) {
    (is_val[i] ? val : train).items.push_back(dataset.items[i]);
  }
  return {std::move(train), std::move(val)};
}

Dataset build_target_domain(const Dataset& source, const TargetShift& shift,
                            std::span<const TransformSpec> training_transforms, std::uint64_t seed) {
  if (shift.occlusion_grid) TransformSpec::occlusion(*shift.occlusion_grid);
  if (shift.drop_percent) TransformSpec::dropping(*shift.drop_percent);
  for (const auto& spec : training_transforms) {
    if (shift.occlusion_grid && spec.kind() == TransformKind::kOcclusion &&
        spec.value() == *shift.occlusion_grid) {
      throw InvalidInput("held-out occlusion grid coincides with a training task");
    }
    if (shift.drop_percent && spec.kind() == TransformKind::kDropping &&
        spec.value() == *shift.drop_percent) {
      throw InvalidInput("held-out drop ratio coincides with a training task");
    }
  }

  Rng rng(seed);
  Dataset out{.items = {}, .class_names = source.class_names, .split = Split::kTarget};
  out.items.reserve(source.items.size());
  for (const auto& cloud : source.items) {
    PointCloud shifted = cloud;
    if (shift.occlusion_grid) {
      shifted = transform_occlusion(shifted, sample_unit_sphere(rng), *shift.occlusion_grid);
    }
    if (shift.drop_percent && shifted.size() >= 2 &&
        dropping_count(shifted.size(), *shift.drop_percent) < shifted.size()) {
      const std::size_t anchor = rng.uniform_index(shifted.size());
      shifted = transform_dropping(shifted, anchor, *shift.drop_percent);
    }
    out.items.push_back(std::move(shifted));
  }
  return out;
}

}  // namespace metasets::data
