#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ditfuse/codec.hpp"
#include "ditfuse/prompt.hpp"
#include "ditfuse/tensor.hpp"

namespace ditfuse {

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t latent_factor = 2;
  std::size_t patch = 2;
  std::size_t lora_rank = 64;
  double lora_alpha = 0.5;
  std::size_t vocab_size = tok::kVocabSize;
  std::size_t max_seq = 512;
  std::size_t mlp_ratio = 4;
  /// Adds the timestep embedding to every noisy-image token as well as
  /// placing it in the final slot. The final slot is causally invisible to
  /// the image tokens that carry the readout.
  bool time_in_noisy = true;
  std::uint64_t codec_seed = 0x5eed;

  std::size_t latent_channels() const { return 3 * latent_factor * latent_factor; }
  std::size_t patch_dim() const { return patch * patch * latent_channels(); }
  std::size_t head_dim() const { return d_model / n_heads; }

  /// Throws ConfigError on inconsistent values.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// One named tensor with its training role.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  bool lora = false;       // LoRA adapter factor
  bool trainable = false;  // receives optimizer updates
};

/// Ordered collection of uniquely named tensors.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> value, bool lora = false);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor<T>& get(const std::string& name) const;
  Tensor<T>& get(const std::string& name);
  const Param<T>& param(const std::string& name) const;
  Param<T>& param(const std::string& name);

  std::vector<Param<T>>& all() { return params_; }
  const std::vector<Param<T>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

  /// Marks LoRA factors trainable (full = false) or every tensor except the
  /// fixed codec matrix (full = true). Resets requires_grad accordingly.
  void set_trainable(bool full);
  std::vector<Param<T>*> trainable();
  void zero_grad();

 private:
  std::vector<Param<T>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename T>
struct DiTModel {
  ModelConfig config;
  ParamStore<T> params;

  /// Fresh random initialization. The velocity head base is zero, LoRA B is
  /// random and LoRA A is zero, so the adapted model starts equal to the base.
  static DiTModel init(const ModelConfig& cfg, std::uint64_t seed);

  Codec codec() const;
  /// Names of every linear layer, each with W, b and (when rank > 0) LoRA A, B.
  std::vector<std::string> linear_names() const;
};

// ---------------------------------------------------------------------------
// Building blocks

/// base_out + α·((x·B)·Aᵀ). A is d_out×r, B is d_in×r. α = 0 returns base_out.
template <typename T>
Tensor<T> lora_apply(const Tensor<T>& base_out, const Tensor<T>& x, const Tensor<T>& A, const Tensor<T>& B, T alpha);

/// W + α·B·Aᵀ for W d_in×d_out.
template <typename T>
Tensor<T> merge_lora(const Tensor<T>& W, const Tensor<T>& A, const Tensor<T>& B, T alpha);

/// x·W + b, plus the LoRA path when the model has adapters for `name`.
template <typename T>
Tensor<T> linear(const DiTModel<T>& model, const std::string& name, const Tensor<T>& x);

/// 2-D sin-cos table for a gh×gw token grid: per token, d/4 bands each of
/// [sin y, cos y, sin x, cos x], base 10000. Row-major over (gy, gx).
std::vector<double> pos_embed_2d(std::size_t gh, std::size_t gw, std::size_t d);
/// 1-D sin-cos for sequence positions: d/2 sines then d/2 cosines.
std::vector<double> pos_embed_1d(std::size_t position, std::size_t d);
/// Sinusoid of 1000·t over d/2 bands with frequencies 10000^(−2k/d):
/// sines then cosines. Input of the timestep MLP.
std::vector<double> timestep_sinusoid(double t, std::size_t d);

/// Timestep MLP output, 1×d.
template <typename T>
Tensor<T> timestep_embed(const DiTModel<T>& model, double t);

/// Latent → patch rows [(gh·gw) × (p·p·C)], row-major over the patch grid,
/// each row ordered (py, px, c).
std::vector<double> patchify(const LatentGrid& lat, std::size_t patch);
LatentGrid unpatchify(std::span<const double> rows, std::size_t gh, std::size_t gw, std::size_t patch, std::size_t channels);
template <typename T>
LatentGrid unpatchify(const Tensor<T>& rows, const LatentGrid& like, std::size_t patch);

/// Patch tokens of a latent: linear projection plus 2-D position embedding.
template <typename T>
Tensor<T> embed_patches(const DiTModel<T>& model, const std::string& embedder, const LatentGrid& lat);

struct ForwardInputs {
  const SequenceLayout* layout = nullptr;
  const AttnMask* mask = nullptr;
  std::array<const LatentGrid*, 2> cond{nullptr, nullptr};
  const LatentGrid* noisy = nullptr;
  double t = 0.0;
};

/// Input token matrix [n × d_model]: text embeddings, patch tokens and the
/// timestep embedding in layout order.
template <typename T>
Tensor<T> embed_sequence(const DiTModel<T>& model, const ForwardInputs& in);

/// Masked transformer stack over an embedded sequence, read out at the
/// noisy-image positions through the final norm and velocity head.
template <typename T>
Tensor<T> transformer_readout(const DiTModel<T>& model, const Tensor<T>& tokens, const SequenceLayout& layout,
                              const AttnMask& mask);

/// Velocity over the noisy-image patch tokens, [n_patches × patch_dim].
/// Equals transformer_readout(embed_sequence(in)).
template <typename T>
Tensor<T> forward(const DiTModel<T>& model, const ForwardInputs& in);

/// Convenience wrapper returning the velocity as a latent grid.
template <typename T>
LatentGrid forward_latent(const DiTModel<T>& model, const ForwardInputs& in);

/// Cast every tensor to another precision, keeping roles.
template <typename To, typename From>
DiTModel<To> cast_model(const DiTModel<From>& model);

}  // namespace ditfuse
