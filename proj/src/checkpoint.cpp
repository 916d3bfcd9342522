#include "metasets/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "metasets/error.hpp"

namespace metasets {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

constexpr char kMagic[8] = {'M', 'S', 'E', 'T', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

void put_values(std::ostream& out, std::span<const double> values) {
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  template <class T>
  T get() {
    T value{};
    in_.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in_) throw ParseError(source_, 0, "truncated checkpoint");
    return value;
  }

  void get_values(std::span<double> values) {
    in_.read(reinterpret_cast<char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in_) throw ParseError(source_, 0, "truncated checkpoint");
  }

  const std::string& source() const { return source_; }

 private:
  std::istream& in_;
  std::string source_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto& shape = checkpoint.params.shape();
  if (!(checkpoint.adam.first.shape() == shape) || !(checkpoint.adam.second.shape() == shape)) {
    throw InvalidInput("Adam state does not match the parameter shape");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, shape.class_count);
  put<std::uint64_t>(out, nn::ModelShape::kLayerCount);
  for (std::size_t l = 0; l < nn::ModelShape::kLayerCount; ++l) {
    put<std::uint64_t>(out, shape.in_dim(l));
    put<std::uint64_t>(out, shape.out_dim(l));
  }
  put<std::uint64_t>(out, checkpoint.params.size());
  put_values(out, checkpoint.params.values());
  put<std::uint64_t>(out, checkpoint.adam.step);
  put<double>(out, checkpoint.adam.beta1);
  put<double>(out, checkpoint.adam.beta2);
  put<double>(out, checkpoint.adam.epsilon);
  put_values(out, checkpoint.adam.first.values());
  put_values(out, checkpoint.adam.second.values());
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Reader reader(in, path.string());

  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(reader.source(), 0, "not a checkpoint file");
  }
  const auto version = reader.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ParseError(reader.source(), 0, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto class_count = reader.get<std::uint64_t>();
  if (class_count < 2) throw ParseError(reader.source(), 0, "class count must be >= 2");
  const nn::ModelShape shape{class_count};
  if (reader.get<std::uint64_t>() != nn::ModelShape::kLayerCount) {
    throw ParseError(reader.source(), 0, "unexpected layer count");
  }
  for (std::size_t l = 0; l < nn::ModelShape::kLayerCount; ++l) {
    const auto in_dim = reader.get<std::uint64_t>();
    const auto out_dim = reader.get<std::uint64_t>();
    if (in_dim != shape.in_dim(l) || out_dim != shape.out_dim(l)) {
      throw ParseError(reader.source(), 0, "layer " + std::to_string(l) + " has unexpected shape");
    }
  }
  if (reader.get<std::uint64_t>() != shape.size()) {
    throw ParseError(reader.source(), 0, "parameter count does not match shape");
  }
  Checkpoint out{.params = nn::ModelParams(shape), .adam = nn::AdamState::zeros(shape)};
  reader.get_values(out.params.values());
  out.adam.step = reader.get<std::uint64_t>();
  out.adam.beta1 = reader.get<double>();
  out.adam.beta2 = reader.get<double>();
  out.adam.epsilon = reader.get<double>();
  reader.get_values(out.adam.first.values());
  reader.get_values(out.adam.second.values());
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ParseError(reader.source(), 0, "trailing bytes after checkpoint");
  }
  return out;
}

}  // namespace metasets
