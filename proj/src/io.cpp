#include "metasets/io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "metasets/error.hpp"

namespace metasets::io {
namespace fs = std::filesystem;
namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, end);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) tokens.push_back(line.substr(start, i - start));
  }
  return tokens;
}

template <class T>
bool parse_number(std::string_view token, T& value) {
  const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  return ec == std::errc() && ptr == token.data() + token.size();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

data::Dataset load_manifest(const fs::path& manifest) {
  const std::string text = read_file(manifest);
  const fs::path base = manifest.parent_path();
  data::Dataset out;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  bool have_classes = false;
  while (std::getline(lines, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty() || tokens[0].front() == '#') continue;
    if (tokens[0] == "classes") {
      for (std::size_t i = 1; i < tokens.size(); ++i) out.class_names.emplace_back(tokens[i]);
      have_classes = true;
      continue;
    }
    if (tokens[0] == "split") {
      if (tokens.size() != 2) throw ParseError(manifest.string(), line_no, "expected 'split <name>'");
      try {
        out.split = data::parse_split(std::string(tokens[1]));
      } catch (const InvalidInput& e) {
        throw ParseError(manifest.string(), line_no, e.what());
      }
      continue;
    }
    int label = 0;
    if (tokens.size() != 2 || !parse_number(tokens[1], label) || label < 0) {
      throw ParseError(manifest.string(), line_no, "expected '<path> <label>'");
    }
    if (have_classes && static_cast<std::size_t>(label) >= out.class_names.size()) {
      throw ParseError(manifest.string(), line_no, "label outside the class list");
    }
    PointCloud cloud = load_cloud(base / std::string(tokens[0]));
    cloud.label = label;
    out.items.push_back(std::move(cloud));
  }
  if (!have_classes) {
    int top = -1;
    for (const auto& item : out.items) top = std::max(top, item.label);
    for (int c = 0; c <= top; ++c) out.class_names.push_back("class" + std::to_string(c));
  }
  return out;
}

data::Dataset load_tree(const fs::path& dir) {
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw ParseError(dir.string(), 0, "no class directories found");

  data::Dataset out;
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    out.class_names.push_back(class_dirs[c].filename().string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[c])) {
      if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      PointCloud cloud = load_cloud(f);
      cloud.label = static_cast<int>(c);
      out.items.push_back(std::move(cloud));
    }
  }
  return out;
}

}  // namespace

std::string format_cloud(const PointCloud& cloud) {
  std::string out;
  out.reserve(cloud.size() * 64 + 32);
  out += std::to_string(cloud.size());
  out += ' ';
  out += std::to_string(cloud.label);
  out += '\n';
  for (const auto& p : cloud.points) {
    append_double(out, p.x());
    out += ' ';
    append_double(out, p.y());
    out += ' ';
    append_double(out, p.z());
    out += '\n';
  }
  return out;
}

PointCloud parse_cloud(const std::string& text, const std::string& source) {
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;

  PointCloud cloud;
  std::size_t expected = 0;
  bool have_header = false;
  while (std::getline(lines, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (!have_header) {
      if (tokens.size() != 2 || !parse_number(tokens[0], expected) ||
          !parse_number(tokens[1], cloud.label)) {
        throw ParseError(source, line_no, "expected header 'n label'");
      }
      have_header = true;
      cloud.points.reserve(expected);
      continue;
    }
    if (cloud.points.size() == expected) {
      throw ParseError(source, line_no, "more point lines than the header count " +
                                            std::to_string(expected));
    }
    Point3 p;
    if (tokens.size() != 3 || !parse_number(tokens[0], p.x()) || !parse_number(tokens[1], p.y()) ||
        !parse_number(tokens[2], p.z())) {
      throw ParseError(source, line_no, "expected 'x y z'");
    }
    cloud.points.push_back(p);
  }
  if (!have_header) throw ParseError(source, line_no, "missing header");
  if (cloud.points.size() != expected) {
    throw ParseError(source, line_no, "header declares " + std::to_string(expected) +
                                          " points but the body has " +
                                          std::to_string(cloud.points.size()));
  }
  return cloud;
}

void save_cloud(const fs::path& path, const PointCloud& cloud) {
  write_file(path, format_cloud(cloud));
}

PointCloud load_cloud(const fs::path& path) { return parse_cloud(read_file(path), path.string()); }

void save_dataset(const data::Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  std::string manifest = "classes";
  for (const auto& name : dataset.class_names) manifest += " " + name;
  manifest += "\nsplit " + data::to_string(dataset.split) + "\n";

  std::map<int, std::size_t> counters;
  for (const auto& item : dataset.items) {
    if (item.label < 0 || static_cast<std::size_t>(item.label) >= dataset.class_count()) {
      throw InvalidInput("item label outside the class list");
    }
    const std::string& name = dataset.class_names[static_cast<std::size_t>(item.label)];
    fs::create_directories(dir / name);
    std::ostringstream file;
    file << name << '/' << std::setw(5) << std::setfill('0') << counters[item.label]++ << ".txt";
    save_cloud(dir / file.str(), item);
    manifest += file.str() + " " + std::to_string(item.label) + "\n";
  }
  write_file(dir / kManifestName, manifest);
}

data::Dataset load_dataset(const fs::path& path) {
  if (fs::is_regular_file(path)) return load_manifest(path);
  if (!fs::is_directory(path)) throw std::runtime_error("no such dataset: " + path.string());
  if (fs::is_regular_file(path / kManifestName)) return load_manifest(path / kManifestName);
  return load_tree(path);
}

}  // namespace metasets::io
