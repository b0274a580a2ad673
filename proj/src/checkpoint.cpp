#include "alter/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace alter {

namespace {
constexpr char kMagic[8] = {'A', 'L', 'T', 'E', 'R', 'D', 'S', 'K'};
constexpr uint32_t kVersion = 1;
}  // namespace

void NamedArrays::add(const std::string& name, const double* data, int64_t count) {
  arrays.emplace_back(name, std::vector<double>(data, data + count));
}

const std::vector<double>& NamedArrays::find(const std::string& name) const {
  for (const auto& [n, v] : arrays) {
    if (n == name) return v;
  }
  throw std::runtime_error("checkpoint: missing array '" + name + "'");
}

bool NamedArrays::contains(const std::string& name) const {
  for (const auto& [n, v] : arrays) {
    if (n == name) return true;
  }
  return false;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["kind"] = ckpt.kind;
  header["step"] = ckpt.step;
  header["config"] = ckpt.config_text;
  auto dir = nlohmann::json::array();
  for (const auto& [name, values] : ckpt.arrays.arrays) {
    dir.push_back({{"name", name}, {"count", values.size()}});
  }
  header["arrays"] = dir;
  std::string json_text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  uint32_t version = kVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  uint64_t json_len = json_text.size();
  out.write(reinterpret_cast<const char*>(&json_len), sizeof(json_len));
  out.write(json_text.data(), static_cast<std::streamsize>(json_len));
  for (const auto& [name, values] : ckpt.arrays.arrays) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("not a checkpoint file: " + path);
  }
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + path);
  }
  uint64_t json_len = 0;
  in.read(reinterpret_cast<char*>(&json_len), sizeof(json_len));
  if (!in || json_len > (1ULL << 30)) {
    throw std::runtime_error("corrupt checkpoint header in " + path);
  }
  std::string json_text(json_len, '\0');
  in.read(json_text.data(), static_cast<std::streamsize>(json_len));
  if (!in) throw std::runtime_error("truncated checkpoint header in " + path);

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("bad checkpoint header in " + path + ": " + e.what());
  }

  Checkpoint ckpt;
  ckpt.kind = header.at("kind").get<std::string>();
  ckpt.step = header.at("step").get<int64_t>();
  ckpt.config_text = header.at("config").get<std::string>();
  for (const auto& entry : header.at("arrays")) {
    std::string name = entry.at("name").get<std::string>();
    uint64_t count = entry.at("count").get<uint64_t>();
    std::vector<double> values(count);
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint data in " + path);
    ckpt.arrays.arrays.emplace_back(std::move(name), std::move(values));
  }
  return ckpt;
}

}  // namespace alter
