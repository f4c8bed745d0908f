#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rhrseg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

// On disk: "RHRSCKPT", u32 version, u64 header length, JSON header
// (iteration, config echo, tensor table), then float32 payloads in table
// order. Little-endian. Identical contents give identical bytes.
struct Checkpoint {
  std::int64_t iteration = 0;
  std::string config_json;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
};

// Throws IOError.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
// Throws CheckpointError on bad magic, version or truncation; IOError if
// the file cannot be opened.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rhrseg
