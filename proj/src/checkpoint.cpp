#include "gqtok/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace gqtok {

namespace {

constexpr char kMagic[4] = {'G', 'Q', 'C', 'K'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    using U = std::make_unsigned_t<T>;
    U u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw CheckpointError("checkpoint truncated while reading " + std::string(what) + " at byte " +
                            std::to_string(pos_));
    }
  }
  template <typename T>
  T le(const char* what) {
    need(sizeof(T), what);
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<std::make_unsigned_t<T>>(in_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

}  // namespace

Tensor NamedArray::to_tensor() const {
  Tensor t(shape);
  for (std::size_t i = 0; i < values.size(); ++i) t[i] = static_cast<double>(values[i]);
  return t;
}

NamedArray NamedArray::from_tensor(std::string name, const Tensor& t) {
  NamedArray a{std::move(name), t.shape(), {}};
  a.values.reserve(t.size());
  for (double v : t.data()) a.values.push_back(static_cast<float>(v));
  return a;
}

const NamedArray* Checkpoint::find(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const NamedArray& Checkpoint::at(std::string_view name) const {
  const NamedArray* a = find(name);
  if (!a) throw CheckpointError("checkpoint has no array '" + std::string(name) + "'");
  return *a;
}

std::vector<std::uint8_t> Checkpoint::to_bytes() const {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(config_text.size()));
  w.bytes(config_text.data(), config_text.size());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (a.name.size() > 0xFFFF) throw CheckpointError("array name too long: " + a.name.substr(0, 32));
    if (a.shape.size() > 0xFF) throw CheckpointError("array rank too large: " + a.name);
    if (shape_numel(a.shape) != a.values.size()) throw CheckpointError("array size does not match shape: " + a.name);
    w.le<std::uint16_t>(static_cast<std::uint16_t>(a.name.size()));
    w.bytes(a.name.data(), a.name.size());
    w.le<std::uint8_t>(static_cast<std::uint8_t>(a.shape.size()));
    for (std::size_t e : a.shape) w.le<std::uint32_t>(static_cast<std::uint32_t>(e));
    for (float v : a.values) w.le<std::uint32_t>(std::bit_cast<std::uint32_t>(v));
  }
  return w.take();
}

Checkpoint Checkpoint::from_bytes(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.str(4, "magic") != std::string(kMagic, 4)) throw CheckpointError("not a checkpoint (bad magic)");
  const auto version = r.le<std::uint32_t>("version");
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_text = r.str(r.le<std::uint32_t>("config length"), "config");
  const auto count = r.le<std::uint32_t>("array count");
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedArray a;
    a.name = r.str(r.le<std::uint16_t>("name length"), "name");
    const auto rank = r.le<std::uint8_t>("rank");
    for (std::uint8_t i = 0; i < rank; ++i) a.shape.push_back(r.le<std::uint32_t>("extent"));
    const std::size_t n = shape_numel(a.shape);
    r.need(n * 4, "values");
    a.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.values[i] = std::bit_cast<float>(r.le<std::uint32_t>("values"));
    c.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after the last array");
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = to_bytes();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_bytes(bytes);
}

}  // namespace gqtok
