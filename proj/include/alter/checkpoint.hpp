#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace alter {

// Self-describing binary record: magic, version, JSON directory (kind, step,
// config echo, array names/sizes), then raw little-endian float64 blobs in
// directory order. Round-trips bit-exactly.
struct NamedArrays {
  std::vector<std::pair<std::string, std::vector<double>>> arrays;

  void add(const std::string& name, const double* data, int64_t count);
  const std::vector<double>& find(const std::string& name) const;
  bool contains(const std::string& name) const;
};

struct Checkpoint {
  std::string kind;         // "teacher" or "student"
  int64_t step = 0;
  std::string config_text;  // canonical config echo, parseable
  NamedArrays arrays;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);  // throws on malformed input

}  // namespace alter
