#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "semimemes/binary_io.hpp"
#include "semimemes/errors.hpp"
#include "semimemes/nn.hpp"
#include "semimemes/tensor.hpp"

namespace semimemes::checkpoint {

// Layout (little-endian):
//   "SMCK" | u16 version=1 | u16 reserved=0 | u32 header_len | header (JSON, UTF-8)
//   u32 tensor_count
//   tensor_count x { u16 name_len | name | u8 precision (1=f32, 2=f64) | u32 rows | u32 cols | rows*cols values }
//   u64 FNV-1a of every preceding byte

inline constexpr char kMagic[4] = {'S', 'M', 'C', 'K'};
inline constexpr std::uint16_t kVersion = 1;

enum class Precision : std::uint8_t { f32 = 1, f64 = 2 };

template <typename T>
constexpr Precision precision_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? Precision::f32 : Precision::f64;
}

inline const char* precision_name(Precision p) { return p == Precision::f32 ? "float32" : "float64"; }

struct Tensor {
  std::string name;
  Precision precision = Precision::f32;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  /// Exact values; f32 tensors hold float-representable doubles.
  std::vector<double> values;

  bool operator==(const Tensor&) const = default;
};

/// Named tensors plus a JSON header (config hash, seed, epoch, schedule
/// state, upstream hashes).
struct Checkpoint {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  std::vector<Tensor> tensors;

  const Tensor& find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw DataError("checkpoint has no tensor named '" + name + "'");
  }

  template <typename T>
  void add(const std::string& name, const Matrix<T>& m) {
    for (const auto& t : tensors)
      if (t.name == name) throw DataError("duplicate tensor name '" + name + "'");
    Tensor t{name, precision_of<T>(), static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols()), {}};
    t.values.assign(m.values().begin(), m.values().end());
    tensors.push_back(std::move(t));
  }

  template <typename T>
  void add_params(const nn::ParamRefs<T>& params) {
    for (const auto* p : params) add(p->name, p->value);
  }

  /// Copies the tensor `name` into `m`, which must already have the stored shape.
  template <typename T>
  void load(const std::string& name, Matrix<T>& m) const {
    const Tensor& t = find(name);
    if (t.rows != m.rows() || t.cols != m.cols()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + Matrix<T>::shape_string(t.rows, t.cols) +
                      ", model expects " + m.shape());
    }
    auto dst = m.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(t.values[i]);
  }

  template <typename T>
  void load_params(const nn::ParamRefs<T>& params) const {
    for (auto* p : params) load(p->name, p->value);
  }
};

inline std::vector<std::uint8_t> encode(const Checkpoint& ck) {
  io::ByteWriter w;
  w.bytes(std::string_view(kMagic, 4));
  w.u16(kVersion);
  w.u16(0);
  const std::string header = ck.header.dump();
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.values.size() != std::size_t(t.rows) * t.cols) {
      throw DataError("tensor '" + t.name + "' value count does not match its shape");
    }
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name);
    w.u8(static_cast<std::uint8_t>(t.precision));
    w.u32(t.rows);
    w.u32(t.cols);
    if (t.precision == Precision::f32) {
      for (double v : t.values) w.f32(static_cast<float>(v));
    } else {
      for (double v : t.values) w.f64(v);
    }
  }
  w.u64(w.checksum());
  return std::move(w.buffer());
}

inline Checkpoint decode(std::span<const std::uint8_t> bytes, const std::string& source) {
  io::ByteReader rd(bytes, source);
  if (rd.bytes(4) != std::string_view(kMagic, 4)) rd.fail("bad magic, not a checkpoint");
  if (rd.u16() != kVersion) rd.fail("unsupported checkpoint version");
  rd.u16();
  if (bytes.size() < 8) rd.fail("file too short");
  const std::size_t body = bytes.size() - 8;
  {
    io::ByteReader tail(bytes.subspan(body), source);
    if (tail.u64() != io::fnv1a64(bytes.first(body))) {
      throw DataError(source + ": checksum mismatch at byte " + std::to_string(body));
    }
  }
  Checkpoint ck;
  const auto header_len = rd.u32();
  try {
    ck.header = nlohmann::ordered_json::parse(rd.bytes(header_len));
  } catch (const nlohmann::json::exception& e) {
    rd.fail(std::string("malformed header: ") + e.what());
  }
  const auto count = rd.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor t;
    t.name = rd.bytes(rd.u16());
    const auto tag = rd.u8();
    if (tag != 1 && tag != 2) rd.fail("unknown precision tag " + std::to_string(tag));
    t.precision = static_cast<Precision>(tag);
    t.rows = rd.u32();
    t.cols = rd.u32();
    const std::size_t n = std::size_t(t.rows) * t.cols;
    const std::size_t width = t.precision == Precision::f32 ? 4 : 8;
    if (n * width > rd.remaining()) rd.fail("tensor '" + t.name + "' overruns file");
    t.values.resize(n);
    for (auto& v : t.values) v = t.precision == Precision::f32 ? double(rd.f32()) : rd.f64();
    ck.tensors.push_back(std::move(t));
  }
  if (rd.position() != body) rd.fail("trailing bytes after tensors");
  return ck;
}

inline void write(const Checkpoint& ck, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode(ck));
}

inline Checkpoint read(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return decode(io::read_file(path), path.string());
}

/// FNV-1a over the raw bytes of every value in `params`, in order.
template <typename T>
std::uint64_t parameter_checksum(const nn::ParamRefs<T>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto* p : params) {
    h = io::fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(p->value.data()), p->value.size() * sizeof(T)), h);
  }
  return h;
}

}  // namespace semimemes::checkpoint
