#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ditfuse/dit.hpp"
#include "ditfuse/m3.hpp"

namespace ditfuse {

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch = 64;
  std::size_t epochs = 2;
  double cond_dropout = 0.01;
  std::uint64_t seed = 0;
  /// Update every tensor instead of only the LoRA factors.
  bool full_finetune = false;
  bool operator==(const TrainConfig&) const = default;
};

struct DataConfig {
  /// Order: m3, seg, control, fusion.
  std::array<double, kNumCategories> mix_weights{0.55, 0.30, 0.107, 0.043};
  std::vector<std::size_t> grid_sizes{16, 32, 64};
  double joint_fraction = 0.25;
  std::size_t total = 1000;
  /// Side length every source image is cropped to before synthesis.
  std::size_t image_size = 32;
  bool operator==(const DataConfig&) const = default;
};

struct SampleConfig {
  std::size_t steps = 32;
  double guidance = 1.0;
  bool operator==(const SampleConfig&) const = default;
};

/// Resolved run configuration. Missing keys take the defaults above; unknown
/// keys are rejected.
struct Config {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  DegradeConfig degrade;
  SampleConfig sample;

  static Config from_json(const nlohmann::json& j);
  static Config from_string(const std::string& text);
  static Config load(const std::string& path);
  nlohmann::json to_json() const;
  /// Compact canonical form: sorted keys, no whitespace.
  std::string canonical() const;
  /// FNV-1a 64 of canonical().
  std::uint64_t hash() const;
  std::string hash_hex() const;

  SynthesisConfig synthesis() const;
  /// Throws ConfigError on inconsistent values.
  void validate() const;
};

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace ditfuse
