#pragma once

// Versioned binary checkpoint: magic, version, endianness tag, the model
// config as JSON, then named float64 arrays with explicit shapes. Loading
// fails loudly on any mismatch.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "microdrive/model.hpp"

namespace microdrive {

inline constexpr char kCkptMagic[8] = {'M', 'D', 'R', 'C', 'K', 'P', 'T', '\0'};
inline constexpr uint32_t kCkptVersion = 1;
inline constexpr uint32_t kCkptEndianTag = 0x01020304u;

namespace ckpt_detail {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const uint64_t n = read_pod<uint64_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const ModelConfig& cfg,
                            const ModelParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open for write: " + path);
  using namespace ckpt_detail;
  os.write(kCkptMagic, sizeof(kCkptMagic));
  write_pod(os, kCkptVersion);
  write_pod(os, kCkptEndianTag);
  write_string(os, to_json(cfg).dump());
  write_pod<uint32_t>(os, static_cast<uint32_t>(params.arrays.size()));
  for (const auto& [name, t] : params.arrays) {
    write_string(os, name);
    write_pod<uint32_t>(os, 2);
    write_pod<uint64_t>(os, static_cast<uint64_t>(t.rows));
    write_pod<uint64_t>(os, static_cast<uint64_t>(t.cols));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  using namespace ckpt_detail;
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic: " + path);
  if (read_pod<uint32_t>(is) != kCkptVersion)
    throw std::runtime_error("checkpoint: unsupported version: " + path);
  if (read_pod<uint32_t>(is) != kCkptEndianTag)
    throw std::runtime_error("checkpoint: endianness mismatch: " + path);
  Checkpoint out;
  out.config = model_config_from_json(nlohmann::json::parse(read_string(is)));

  // expected names and shapes come from the config
  const ModelParams expect = ModelParams::init(out.config, 0);
  const uint32_t n = read_pod<uint32_t>(is);
  if (n != expect.arrays.size())
    throw std::runtime_error("checkpoint: wrong array count: " + path);
  for (uint32_t i = 0; i < n; ++i) {
    const std::string name = read_string(is);
    if (name != expect.arrays[i].first)
      throw std::runtime_error("checkpoint: array name mismatch at index " + std::to_string(i) +
                               ": got '" + name + "', want '" + expect.arrays[i].first + "'");
    const uint32_t nd = read_pod<uint32_t>(is);
    if (nd != 2) throw std::runtime_error("checkpoint: unsupported rank for " + name);
    const auto rows = static_cast<int>(read_pod<uint64_t>(is));
    const auto cols = static_cast<int>(read_pod<uint64_t>(is));
    const Tensor& et = expect.arrays[i].second;
    if (rows != et.rows || cols != et.cols)
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    Tensor t(rows, cols);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated array data for " + name);
    out.params.arrays.emplace_back(name, std::move(t));
  }
  return out;
}

}  // namespace microdrive
