#pragma once

#include <cstddef>
#include <functional>
#include <utility>

#include "ditfuse/codec.hpp"
#include "ditfuse/dit.hpp"
#include "ditfuse/prompt.hpp"
#include "ditfuse/rng.hpp"
#include "ditfuse/tensor.hpp"

namespace ditfuse {

/// x_t = t·x + (1−t)·ε, elementwise.
LatentGrid interpolate(const LatentGrid& x, const LatentGrid& eps, double t);
double interpolate(double x, double eps, double t);

/// Standard-normal latent of the given shape.
LatentGrid normal_like(const LatentGrid& like, Rng& rng);

/// mean(((x−ε) − v_pred)²) as a graph node over v_pred.
template <typename T>
Tensor<T> fm_loss(const Tensor<T>& v_pred, std::span<const double> x, std::span<const double> eps);
double fm_loss(const LatentGrid& v_pred, const LatentGrid& x, const LatentGrid& eps);

/// Replaces every text-condition token (bytes and tags) by the NULL token.
TokenSeq null_condition(const TokenSeq& tokens);

/// With probability p returns null_condition(tokens); the flag reports a drop.
std::pair<TokenSeq, bool> drop_condition(const TokenSeq& tokens, double p, Rng& rng);

/// v(x, t, conditional). `conditional = false` asks for the NULL-text velocity.
using VelocityFn = std::function<LatentGrid(const LatentGrid& x, double t, bool conditional)>;

/// Euler integration from x0 at t = 0 to t = 1 in K uniform steps. With
/// guidance s ≠ 1 the velocity is v_u + s·(v_c − v_u). The state is carried
/// in double precision.
LatentGrid integrate_euler(const VelocityFn& v, const LatentGrid& x0, std::size_t steps, double guidance);

struct Conditioning {
  TokenSeq tokens;
  LatentGrid cond_a;
  LatentGrid cond_b;
};

/// Velocity field of a model for one fixed condition.
VelocityFn model_velocity(const DiTModel<float>& model, const Conditioning& cond);

/// Latent sample: ε ~ N(0,1) shaped like the condition latents, then Euler.
LatentGrid sample_latent(const DiTModel<float>& model, const Conditioning& cond, std::size_t steps, double guidance, Rng& rng);
/// sample_latent followed by decoding, clamped to [0,1].
ImageBuf sample_euler(const DiTModel<float>& model, const Conditioning& cond, std::size_t steps, double guidance, Rng& rng);

/// Builds the model conditioning for a prompt and two input images.
Conditioning make_conditioning(const Codec& codec, const std::string& prompt, const ImageBuf& a, const ImageBuf& b);

}  // namespace ditfuse
