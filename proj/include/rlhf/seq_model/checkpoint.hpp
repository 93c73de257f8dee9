#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace rlhf::seq_model {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

struct NamedArray {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<double> values;
};

// Binary layout (all integers little-endian):
//   "RLHFCKPT"  u32 version  u32 header_len  header_len bytes of JSON
//   u32 n_arrays, then per array:
//     u16 name_len, name, u8 dtype, u64 count, count * {f32|f64} LE
// The JSON header holds "kind" and "config".
struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string kind;
  nlohmann::json config = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
  const NamedArray* find(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
};

}  // namespace rlhf::seq_model
