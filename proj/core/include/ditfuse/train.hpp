#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ditfuse/config.hpp"
#include "ditfuse/dit.hpp"
#include "ditfuse/flow.hpp"
#include "ditfuse/rng.hpp"

namespace ditfuse {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First and second moments per trainable tensor, keyed by parameter name.
template <typename T>
struct AdamState {
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
  std::uint64_t step = 0;
};

/// One AdamW update of every trainable tensor from its accumulated grad.
/// Grads are zeroed afterwards. Tensors without a grad are left unchanged.
template <typename T>
void adamw_update(ParamStore<T>& params, AdamState<T>& state, const AdamWConfig& cfg);

/// Generic step: builds the loss graph, backpropagates, updates. Returns the
/// loss. Throws NonFiniteLoss before any update when the loss is not finite.
template <typename T>
double optimizer_step(ParamStore<T>& params, AdamState<T>& state, const AdamWConfig& cfg,
                      const std::function<Tensor<T>()>& loss_fn);

/// One training example in latent space.
struct TrainSample {
  std::string id;
  TokenSeq tokens;
  LatentGrid cond_a;
  LatentGrid cond_b;
  LatentGrid target;
};

struct TrainerState {
  Config config;
  DiTModel<float> model;
  AdamState<float> adam;
  std::uint64_t step = 0;
  Rng rng;

  /// Fresh model and optimizer for a config.
  static TrainerState create(const Config& config);
  /// Marks tensors trainable per config.train.full_finetune.
  void apply_trainable();
};

/// Flow-matching step over a batch: per sample, draws ε, t ~ U[0,1] and the
/// condition-dropout coin from the state stream, averages the per-sample losses,
/// and applies one AdamW update.
double train_step(TrainerState& state, std::span<const TrainSample* const> batch);

/// Loads a manifest's images, encodes them and tokenizes the prompts. Paths
/// are resolved against `root`.
std::vector<TrainSample> load_samples(const Manifest& manifest, const std::filesystem::path& root, const Codec& codec);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const TrainerState& state);
TrainerState deserialize_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const TrainerState& state, const std::filesystem::path& path);
TrainerState load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

struct RunOptions {
  /// Loss log path; appended to when resuming, otherwise truncated.
  std::optional<std::filesystem::path> loss_csv;
  /// Stop after this many total steps even if epochs remain.
  std::optional<std::uint64_t> stop_at_step;
  /// Called after each step with (step index, loss).
  std::function<void(std::uint64_t, double)> on_step;
};

struct RunResult {
  std::vector<double> losses;  // one per step executed in this call
};

/// Total optimizer steps implied by the config for n samples.
std::uint64_t planned_steps(const Config& config, std::size_t n_samples);
/// Sample indices of the batch taken at a global step; the epoch order is a
/// shuffle seeded by (train.seed, epoch).
std::vector<std::size_t> batch_indices(const Config& config, std::size_t n_samples, std::uint64_t step);

/// Continues `state` from its step counter to the end of the schedule.
RunResult run_training(TrainerState& state, const std::vector<TrainSample>& samples, const RunOptions& options = {});

}  // namespace ditfuse
