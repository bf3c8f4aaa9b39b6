#pragma once

// Checkpoint file format, version 1:
//   bytes 0..7   magic "AGMCKPT1"
//   bytes 8..15  little-endian u64: JSON header length in bytes
//   header       JSON: version, config snapshot, step counter, rng states
//                (u64 words as decimal strings, JSON numbers are lossy
//                above 2^53), optimizer step counters, and a block
//                directory of {name, shape, offset}
//   data         raw little-endian 64-bit floats, one run per block
//
// Round trips are bitwise: both the float payload and the header metadata
// reproduce exactly.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "agm/tensor.hpp"

namespace agm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'A', 'G', 'M', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint64_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointBlock {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct CheckpointData {
  nlohmann::json config;
  std::uint64_t step = 0;
  std::map<std::string, std::array<std::uint64_t, 4>> rng_states;
  std::map<std::string, std::uint64_t> counters;
  std::vector<CheckpointBlock> blocks;

  const CheckpointBlock* find(const std::string& name) const {
    for (const auto& b : blocks) {
      if (b.name == name) {
        return &b;
      }
    }
    return nullptr;
  }
};

inline void save_checkpoint(const std::string& path, const CheckpointData& data) {
  nlohmann::json dir = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& b : data.blocks) {
    if (shape_numel(b.shape) != b.values.size()) {
      throw CheckpointError("block '" + b.name + "' shape " + shape_str(b.shape) +
                            " does not hold " + std::to_string(b.values.size()) + " values");
    }
    dir.push_back({{"name", b.name}, {"shape", b.shape}, {"offset", offset}});
    offset += b.values.size() * sizeof(double);
  }
  nlohmann::json rng = nlohmann::json::object();
  for (const auto& [name, state] : data.rng_states) {
    nlohmann::json words = nlohmann::json::array();
    for (std::uint64_t w : state) {
      words.push_back(std::to_string(w));
    }
    rng[name] = words;
  }
  const nlohmann::json header{{"version", kCheckpointVersion}, {"config", data.config},
                              {"step", data.step},            {"rng", rng},
                              {"counters", data.counters},    {"blocks", dir}};
  const std::string header_str = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw CheckpointError("cannot open '" + path + "' for writing");
  }
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t header_len = header_str.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  for (const auto& b : data.blocks) {
    out.write(reinterpret_cast<const char*>(b.values.data()),
              static_cast<std::streamsize>(b.values.size() * sizeof(double)));
  }
  if (!out.good()) {
    throw CheckpointError("write failed for '" + path + "'");
  }
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError("cannot open '" + path + "'");
  }
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in.good() || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("'" + path + "' is not a checkpoint (bad magic)");
  }
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in.good()) {
    throw CheckpointError("'" + path + "' is truncated (no header length)");
  }
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  if (!in.good()) {
    throw CheckpointError("'" + path + "' is truncated (header)");
  }
  nlohmann::json header = nlohmann::json::parse(header_str, nullptr, false);
  if (header.is_discarded()) {
    throw CheckpointError("'" + path + "' has a corrupt header");
  }
  if (!header.contains("version") || header["version"].get<std::uint64_t>() != kCheckpointVersion) {
    throw CheckpointError("'" + path + "' has unsupported checkpoint version");
  }

  CheckpointData data;
  data.config = header.at("config");
  data.step = header.at("step").get<std::uint64_t>();
  for (const auto& [name, words] : header.at("rng").items()) {
    if (!words.is_array() || words.size() != 4) {
      throw CheckpointError("rng state '" + name + "' malformed");
    }
    std::array<std::uint64_t, 4> state{};
    for (std::size_t i = 0; i < 4; ++i) {
      state[i] = std::stoull(words[i].get<std::string>());
    }
    data.rng_states.emplace(name, state);
  }
  for (const auto& [name, count] : header.at("counters").items()) {
    data.counters.emplace(name, count.get<std::uint64_t>());
  }

  std::vector<char> payload(std::istreambuf_iterator<char>(in), {});
  for (const auto& entry : header.at("blocks")) {
    CheckpointBlock b;
    b.name = entry.at("name").get<std::string>();
    b.shape = entry.at("shape").get<Shape>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    const std::size_t n = shape_numel(b.shape);
    if (offset + n * sizeof(double) > payload.size()) {
      throw CheckpointError("'" + path + "' is truncated (block '" + b.name + "')");
    }
    b.values.resize(n);
    std::memcpy(b.values.data(), payload.data() + offset, n * sizeof(double));
    data.blocks.push_back(std::move(b));
  }
  return data;
}

}  // namespace agm
