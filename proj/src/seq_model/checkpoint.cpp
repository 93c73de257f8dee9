#include "rlhf/seq_model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rlhf::seq_model {
namespace {

constexpr char kMagic[8] = {'R', 'L', 'H', 'F', 'C', 'K', 'P', 'T'};

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }
  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw std::runtime_error("checkpoint: truncated file");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const NamedArray& Checkpoint::array(const std::string& name) const {
  if (const auto* a = find(name)) return *a;
  throw std::runtime_error("checkpoint: missing array '" + name + "'");
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kFormatVersion);
  nlohmann::json header{{"kind", kind}, {"config", config}};
  const std::string h = header.dump();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.size()));
  out += h;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(a.name.size()));
    out += a.name;
    out.push_back(static_cast<char>(a.dtype));
    put_le<std::uint64_t>(out, a.values.size());
    for (double v : a.values) {
      if (a.dtype == DType::kF32)
        put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      else
        put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  Reader r(bytes);
  if (r.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic)))
    throw std::runtime_error("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kFormatVersion)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(version));
  Checkpoint ck;
  const auto header = nlohmann::json::parse(r.take(r.get<std::uint32_t>()));
  ck.kind = header.at("kind").get<std::string>();
  ck.config = header.at("config");
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray a;
    a.name = r.take(r.get<std::uint16_t>());
    const auto dt = r.get<std::uint8_t>();
    if (dt > 1) throw std::runtime_error("checkpoint: unknown dtype");
    a.dtype = static_cast<DType>(dt);
    const auto count = r.get<std::uint64_t>();
    a.values.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k) {
      if (a.dtype == DType::kF32)
        a.values.push_back(std::bit_cast<float>(r.get<std::uint32_t>()));
      else
        a.values.push_back(std::bit_cast<double>(r.get<std::uint64_t>()));
    }
    ck.arrays.push_back(std::move(a));
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path.string());
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("checkpoint: write failed " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

}  // namespace rlhf::seq_model
