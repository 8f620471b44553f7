#pragma once

// Binary checkpoint container.
//
//   "GQCK"  u32 version  u32 config_len  config bytes (UTF-8 key = value text)
//   u32 array_count, then per array:
//   u16 name_len  name  u8 rank  u32 extents[rank]  float32 values[prod(extents)]
//
// Integers and floats are little-endian. Values are stored as float32, so a
// parameter that is already float32-representable round-trips bit for bit.

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gqtok/tensor.hpp"

namespace gqtok {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;

  Tensor to_tensor() const;
  static NamedArray from_tensor(std::string name, const Tensor& t);
  bool operator==(const NamedArray&) const = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string config_text;
  std::vector<NamedArray> arrays;

  const NamedArray* find(std::string_view name) const;
  /// Throws CheckpointError when absent.
  const NamedArray& at(std::string_view name) const;

  std::vector<std::uint8_t> to_bytes() const;
  /// Throws CheckpointError on bad magic, unknown version or truncation.
  static Checkpoint from_bytes(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  bool operator==(const Checkpoint&) const = default;
};

}  // namespace gqtok
