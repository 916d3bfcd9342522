#pragma once

#include <filesystem>
#include <string>

#include "metasets/data.hpp"
#include "metasets/geometry.hpp"

namespace metasets::io {

// One cloud per file: header "n label", then n lines "x y z".
// Coordinates use the shortest round-trip decimal form.
void save_cloud(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud load_cloud(const std::filesystem::path& path);
PointCloud parse_cloud(const std::string& text, const std::string& source);
std::string format_cloud(const PointCloud& cloud);

inline constexpr const char* kManifestName = "manifest.txt";

// Writes <dir>/<class>/<nnnnn>.txt for every item plus <dir>/manifest.txt:
//   classes <name_0> ... <name_{C-1}>
//   split <source|train|val|target>
//   <relative path> <label>      (one line per item, in dataset order)
void save_dataset(const data::Dataset& dataset, const std::filesystem::path& dir);

// Accepts a manifest file, a directory holding manifest.txt, or a
// directory-per-class tree (labels follow alphabetical directory order).
// The manifest / directory label overrides the label in each file header.
data::Dataset load_dataset(const std::filesystem::path& path);

}  // namespace metasets::io
