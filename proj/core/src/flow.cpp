#include "ditfuse/flow.hpp"

#include <cmath>

#include "ditfuse/error.hpp"

namespace ditfuse {

namespace {

void check_same(const LatentGrid& a, const LatentGrid& b) {
  if (!a.same_shape(b)) fail(ErrorCode::ShapeMismatch, "latent shapes differ");
}

}  // namespace

double interpolate(double x, double eps, double t) { return t * x + (1.0 - t) * eps; }

LatentGrid interpolate(const LatentGrid& x, const LatentGrid& eps, double t) {
  check_same(x, eps);
  if (!(t >= 0.0 && t <= 1.0)) fail(ErrorCode::BadParam, "t must lie in [0,1]");
  LatentGrid out = x;
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = static_cast<float>(interpolate(x.data[i], eps.data[i], t));
  return out;
}

LatentGrid normal_like(const LatentGrid& like, Rng& rng) {
  LatentGrid out(like.height, like.width, like.channels);
  for (auto& v : out.data) v = static_cast<float>(rng.normal());
  return out;
}

template <typename T>
Tensor<T> fm_loss(const Tensor<T>& v_pred, std::span<const double> x, std::span<const double> eps) {
  if (x.size() != eps.size() || x.size() != v_pred.numel()) fail(ErrorCode::ShapeMismatch, "fm_loss operands differ in size");
  std::vector<T> target(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) target[i] = static_cast<T>(x[i] - eps[i]);
  auto diff = sub(Tensor<T>(v_pred.shape(), std::move(target)), v_pred);
  return mean(mul(diff, diff));
}

double fm_loss(const LatentGrid& v_pred, const LatentGrid& x, const LatentGrid& eps) {
  check_same(v_pred, x);
  check_same(x, eps);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = (static_cast<double>(x.data[i]) - eps.data[i]) - v_pred.data[i];
    s += r * r;
  }
  return s / static_cast<double>(x.size());
}

TokenSeq null_condition(const TokenSeq& tokens) {
  TokenSeq out = tokens;
  for (auto& id : out)
    if (is_text_condition_token(id)) id = tok::kNull;
  return out;
}

std::pair<TokenSeq, bool> drop_condition(const TokenSeq& tokens, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) fail(ErrorCode::BadParam, "dropout probability must be in [0,1]");
  const bool drop = rng.bernoulli(p);
  return {drop ? null_condition(tokens) : tokens, drop};
}

LatentGrid integrate_euler(const VelocityFn& v, const LatentGrid& x0, std::size_t steps, double guidance) {
  if (steps == 0) fail(ErrorCode::BadParam, "sampler needs at least one step");
  std::vector<double> x(x0.data.begin(), x0.data.end());
  LatentGrid cur = x0;
  const double dt = 1.0 / static_cast<double>(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(steps);
    const LatentGrid vc = v(cur, t, true);
    check_same(vc, cur);
    if (guidance != 1.0) {
      const LatentGrid vu = v(cur, t, false);
      check_same(vu, cur);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += (vu.data[i] + guidance * (static_cast<double>(vc.data[i]) - vu.data[i])) * dt;
    } else {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += static_cast<double>(vc.data[i]) * dt;
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(x[i])) fail(ErrorCode::NonFiniteState, "sampler state became non-finite at step " + std::to_string(k));
      cur.data[i] = static_cast<float>(x[i]);
    }
  }
  return cur;
}

VelocityFn model_velocity(const DiTModel<float>& model, const Conditioning& cond) {
  if (!cond.cond_a.same_shape(cond.cond_b)) fail(ErrorCode::ShapeMismatch, "condition images differ in size");
  const std::size_t p = model.config.patch;
  const std::size_t n_img = (cond.cond_a.height / p) * (cond.cond_a.width / p);
  auto make = [&](const TokenSeq& tokens) {
    auto layout = assemble_sequence(tokens, {n_img, n_img}, n_img);
    auto mask = build_attention_mask(layout);
    return std::make_shared<std::pair<SequenceLayout, AttnMask>>(std::move(layout), std::move(mask));
  };
  auto cond_seq = make(cond.tokens);
  auto null_seq = make(null_condition(cond.tokens));
  return [&model, &cond, cond_seq, null_seq](const LatentGrid& x, double t, bool conditional) {
    const auto& seq = conditional ? *cond_seq : *null_seq;
    ForwardInputs in;
    in.layout = &seq.first;
    in.mask = &seq.second;
    in.cond = {&cond.cond_a, &cond.cond_b};
    in.noisy = &x;
    in.t = t;
    return forward_latent(model, in);
  };
}

LatentGrid sample_latent(const DiTModel<float>& model, const Conditioning& cond, std::size_t steps, double guidance, Rng& rng) {
  const LatentGrid x0 = normal_like(cond.cond_a, rng);
  return integrate_euler(model_velocity(model, cond), x0, steps, guidance);
}

ImageBuf sample_euler(const DiTModel<float>& model, const Conditioning& cond, std::size_t steps, double guidance, Rng& rng) {
  return model.codec().decode(sample_latent(model, cond, steps, guidance, rng));
}

Conditioning make_conditioning(const Codec& codec, const std::string& prompt, const ImageBuf& a, const ImageBuf& b) {
  if (a.height() != b.height() || a.width() != b.width()) fail(ErrorCode::ShapeMismatch, "input images differ in size");
  (void)parse_prompt(prompt);
  return {tokenize(prompt), codec.encode(a), codec.encode(b)};
}

template Tensor<float> fm_loss(const Tensor<float>&, std::span<const double>, std::span<const double>);
template Tensor<double> fm_loss(const Tensor<double>&, std::span<const double>, std::span<const double>);

}  // namespace ditfuse
