#pragma once

// Metrics JSONL streams, content hashing, and the run manifest.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "microdrive/errors.hpp"

namespace microdrive {

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string content_hash(const std::string& bytes) {
  return hash_hex(fnv1a64(bytes.data(), bytes.size()));
}

inline std::string file_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("hash: cannot open " + path);
  uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<size_t>(is.gcount()), h);
  }
  return hash_hex(h);
}

// One JSON object per line, append mode; all writes go through one appender.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path) : os_(path, std::ios::app) {
    if (!os_) throw IoError("metrics: cannot open " + path);
  }
  void write(const nlohmann::json& j) {
    os_ << j.dump() << "\n";
    os_.flush();
  }

 private:
  std::ofstream os_;
};

inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("metrics: cannot open " + path);
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return s;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os << content;
}

// ---------------------------------------------------------------------------
// Run manifest: every artifact content-hashed.

inline std::string manifest_path(const std::string& out_dir) {
  return (std::filesystem::path(out_dir) / "manifest.json").string();
}

inline nlohmann::json load_manifest(const std::string& out_dir) {
  const std::string p = manifest_path(out_dir);
  if (!std::filesystem::exists(p)) {
    return nlohmann::json{{"version", 1}};
  }
  return nlohmann::json::parse(read_file(p));
}

inline void save_manifest(const std::string& out_dir, const nlohmann::json& m) {
  write_file(manifest_path(out_dir), m.dump(2) + "\n");
}

}  // namespace microdrive
