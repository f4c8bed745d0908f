#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rhrseg/augment.hpp"
#include "rhrseg/dataset.hpp"
#include "rhrseg/hrseg.hpp"
#include "rhrseg/relight.hpp"

namespace rhrseg {

inline constexpr int kConfigVersion = 1;

struct DatasetSpec {
  std::string root;
  Layout layout = Layout::kSynthetic;
  Split split = Split::kTrain;
};

struct AdaptConfig {
  double adv_weight = 0.001;
  double disc_lr = 1e-4;
  int disc_channels = 64;

  void validate() const;
};

struct TrainConfig {
  int max_iterations = 40000;
  int batch_size = 8;
  double base_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double poly_power = 0.9;
  std::uint64_t seed = 1;
  bool relight_enabled = true;
  std::optional<AdaptConfig> adaptation;
  DatasetSpec source;
  std::optional<DatasetSpec> target;
  // Evaluation split; the source split when absent.
  std::optional<DatasetSpec> val;
  AugConfig aug;
  int eval_interval = 1000;
  // Data-loading threads; never changes results.
  int workers = 1;

  void validate() const;
};

struct ExperimentConfig {
  int version = kConfigVersion;
  TrainConfig train;
  RelightConfig relight;
  SegConfig seg;

  void validate() const;
};

// Small networks and a 64x64 synthetic corpus at `data_root`, sized for a
// desktop CPU: converges on the 16-pair overfit run in 200 iterations.
ExperimentConfig toy_config(const std::string& data_root);

// Serialized form; every key is always written, so the echo is complete.
std::string config_to_json(const ExperimentConfig& config);
// Strict: unknown keys, wrong types and a version mismatch throw ConfigError.
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

// "a.b.c=value" or "leaf=value" when `leaf` names exactly one key. The
// value is parsed as JSON, falling back to a plain string.
void apply_override(ExperimentConfig& config, const std::string& assignment);

// 64-bit FNV-1a of the canonical JSON, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

}  // namespace rhrseg
