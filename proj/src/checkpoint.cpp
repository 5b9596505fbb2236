#include "kpg/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace kpg {

namespace {

constexpr std::array<char, 8> kMagic = {'K', 'P', 'G', 'C', 'K', 'P', 'T', '\0'};

template <typename U>
void put(std::ostream& out, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::array<char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), sizeof(U));
}

template <typename U>
U get(std::istream& in) {
  std::array<char, sizeof(U)> bytes;
  in.read(bytes.data(), sizeof(U));
  require(bool(in), "checkpoint: unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  U value;
  std::memcpy(&value, bytes.data(), sizeof(U));
  return value;
}

std::string get_string(std::istream& in, std::size_t max_len) {
  const auto n = get<std::uint32_t>(in);
  require(n <= max_len, "checkpoint: string length out of range");
  std::string s(n, '\0');
  in.read(s.data(), n);
  require(bool(in), "checkpoint: unexpected end of file");
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.vocab_fingerprint);
  const std::string cfg = ckpt.model.config.serialize();
  put<std::uint32_t>(out, std::uint32_t(cfg.size()));
  out.write(cfg.data(), std::streamsize(cfg.size()));
  put<std::uint32_t>(out, std::uint32_t(ckpt.model.params.tensor_count()));
  for (const auto& [name, t] : ckpt.model.params) {
    put<std::uint32_t>(out, std::uint32_t(name.size()));
    out.write(name.data(), std::streamsize(name.size()));
    put<std::uint32_t>(out, std::uint32_t(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    for (float v : t.values()) put<float>(out, v);
  }
  require(bool(out), "checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  require(bool(in) && magic == kMagic, "checkpoint: bad magic header");
  const auto version = get<std::uint32_t>(in);
  require(version == kCheckpointVersion, "checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.vocab_fingerprint = get<std::uint64_t>(in);
  ckpt.model.config = ModelConfig::deserialize(get_string(in, 1 << 16));
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = get_string(in, 1 << 12);
    const auto rank = get<std::uint32_t>(in);
    require(rank <= 8, "checkpoint: tensor rank out of range");
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(in);
    Tensor<float> t(shape);
    for (auto& v : t.values()) v = get<float>(in);
    ckpt.model.params.add(std::move(name), std::move(t));
  }
  for (const auto& [name, shape] : parameter_shapes(ckpt.model.config)) {
    require(ckpt.model.params.contains(name), "checkpoint: missing tensor '" + name + "'");
    require(ckpt.model.params.at(name).shape() == shape, "checkpoint: tensor '" + name + "' has wrong shape");
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), "cannot write checkpoint " + path);
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), "cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace kpg
