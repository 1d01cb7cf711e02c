#include "ditfuse/dit.hpp"

#include <cmath>

#include "ditfuse/error.hpp"
#include "ditfuse/rng.hpp"

namespace ditfuse {

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::ConfigError, "model config: " + what); };
  if (d_model == 0 || n_heads == 0 || n_layers == 0) bad("d_model, n_heads and n_layers must be positive");
  if (d_model % n_heads != 0) bad("d_model must be divisible by n_heads");
  if (d_model % 4 != 0) bad("d_model must be divisible by 4 for 2-D position embeddings");
  if (latent_factor == 0) bad("latent_factor must be >= 1");
  if (patch == 0) bad("patch must be >= 1");
  if (vocab_size < static_cast<std::size_t>(tok::kVocabSize)) bad("vocab_size smaller than the tokenizer vocabulary");
  if (max_seq == 0) bad("max_seq must be positive");
  if (mlp_ratio == 0) bad("mlp_ratio must be positive");
  if (!std::isfinite(lora_alpha)) bad("lora_alpha must be finite");
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Tensor<T> value, bool lora) {
  if (contains(name)) fail(ErrorCode::BadParam, "duplicate parameter name " + name);
  index_[name] = params_.size();
  params_.push_back({name, std::move(value), lora, false});
  return params_.back().value;
}

template <typename T>
const Param<T>& ParamStore<T>::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorCode::BadParam, "unknown parameter " + name);
  return params_[it->second];
}

template <typename T>
Param<T>& ParamStore<T>::param(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) fail(ErrorCode::BadParam, "unknown parameter " + name);
  return params_[it->second];
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
  return param(name).value;
}

template <typename T>
Tensor<T>& ParamStore<T>::get(const std::string& name) {
  return param(name).value;
}

template <typename T>
void ParamStore<T>::set_trainable(bool full) {
  for (auto& p : params_) {
    p.trainable = full ? p.name != "codec.q" : p.lora;
    // Rebuild the leaf with the new flag; data is copied, graph-free.
    std::vector<T> data(p.value.data().begin(), p.value.data().end());
    p.value = Tensor<T>(p.value.shape(), std::move(data), p.trainable);
  }
}

template <typename T>
std::vector<Param<T>*> ParamStore<T>::trainable() {
  std::vector<Param<T>*> out;
  for (auto& p : params_)
    if (p.trainable) out.push_back(&p);
  return out;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& p : params_)
    if (p.value.requires_grad()) p.value.zero_grad();
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.normal() * stddev);
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> const_tensor(Shape shape, const std::vector<double>& values) {
  std::vector<T> data(values.begin(), values.end());
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void add_linear(DiTModel<T>& m, const std::string& name, std::size_t d_in, std::size_t d_out, Rng& rng, bool zero_base = false) {
  const double std_w = zero_base ? 0.0 : 1.0 / std::sqrt(static_cast<double>(d_in));
  m.params.add(name + ".W", normal_tensor<T>({d_in, d_out}, std_w, rng));
  m.params.add(name + ".b", Tensor<T>::zeros({d_out}));
  const std::size_t r = m.config.lora_rank;
  if (r > 0) {
    m.params.add(name + ".lora_A", Tensor<T>::zeros({d_out, r}), true);
    m.params.add(name + ".lora_B", normal_tensor<T>({d_in, r}, 1.0 / std::sqrt(static_cast<double>(d_in)), rng), true);
  }
}

template <typename T>
void add_layernorm(DiTModel<T>& m, const std::string& name, std::size_t d) {
  m.params.add(name + ".g", Tensor<T>::full({d}, T(1)));
  m.params.add(name + ".b", Tensor<T>::zeros({d}));
}

template <typename T>
Tensor<T> ln(const DiTModel<T>& m, const std::string& name, const Tensor<T>& x) {
  return layernorm(x, m.params.get(name + ".g"), m.params.get(name + ".b"), T(1e-5));
}

std::string block(std::size_t l) { return "blocks." + std::to_string(l); }

}  // namespace

template <typename T>
DiTModel<T> DiTModel<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DiTModel<T> m;
  m.config = cfg;
  Rng rng(seed);
  const std::size_t d = cfg.d_model;
  const std::size_t pd = cfg.patch_dim();

  m.params.add("tok_embed", normal_tensor<T>({cfg.vocab_size, d}, 1.0, rng));
  add_linear(m, "cond_embed", pd, d, rng);
  add_linear(m, "noisy_embed", pd, d, rng);
  add_linear(m, "time_mlp.fc1", d, d, rng);
  add_linear(m, "time_mlp.fc2", d, d, rng);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto b = block(l);
    add_layernorm(m, b + ".ln1", d);
    add_linear(m, b + ".attn.qkv", d, 3 * d, rng);
    add_linear(m, b + ".attn.proj", d, d, rng);
    add_layernorm(m, b + ".ln2", d);
    add_linear(m, b + ".mlp.fc1", d, cfg.mlp_ratio * d, rng);
    add_linear(m, b + ".mlp.fc2", cfg.mlp_ratio * d, d, rng);
  }
  add_layernorm(m, "final_ln", d);
  add_linear(m, "head", d, pd, rng, /*zero_base=*/true);

  const Codec codec(cfg.latent_factor, cfg.codec_seed);
  const std::size_t c = cfg.latent_channels();
  m.params.add("codec.q", const_tensor<T>({c, c}, codec.q()));
  m.params.set_trainable(false);
  return m;
}

template <typename T>
Codec DiTModel<T>::codec() const {
  const auto q = params.get("codec.q").data();
  return Codec(config.latent_factor, std::vector<double>(q.begin(), q.end()));
}

template <typename T>
std::vector<std::string> DiTModel<T>::linear_names() const {
  std::vector<std::string> names;
  for (const auto& p : params.all()) {
    const auto& n = p.name;
    if (n.size() > 2 && n.compare(n.size() - 2, 2, ".W") == 0) names.push_back(n.substr(0, n.size() - 2));
  }
  return names;
}

// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> lora_apply(const Tensor<T>& base_out, const Tensor<T>& x, const Tensor<T>& A, const Tensor<T>& B, T alpha) {
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(1)) {
    fail(ErrorCode::RankMismatch, "LoRA factors disagree on rank: A " + shape_str(A.shape()) + ", B " + shape_str(B.shape()));
  }
  if (B.dim(0) != x.cols() || A.dim(0) != base_out.cols()) {
    fail(ErrorCode::RankMismatch, "LoRA factor dims do not match the layer: A " + shape_str(A.shape()) + ", B " +
                                      shape_str(B.shape()));
  }
  if (alpha == T(0)) return base_out;
  return add(base_out, scale(matmul_nt(matmul(x, B), A), alpha));
}

template <typename T>
Tensor<T> merge_lora(const Tensor<T>& W, const Tensor<T>& A, const Tensor<T>& B, T alpha) {
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(1) || B.dim(0) != W.dim(0) || A.dim(0) != W.dim(1)) {
    fail(ErrorCode::RankMismatch, "LoRA factors do not fit W " + shape_str(W.shape()));
  }
  if (alpha == T(0)) return W;
  return add(W, scale(matmul_nt(B, A), alpha));
}

template <typename T>
Tensor<T> linear(const DiTModel<T>& model, const std::string& name, const Tensor<T>& x) {
  const auto& ps = model.params;
  auto out = add_bias(matmul(x, ps.get(name + ".W")), ps.get(name + ".b"));
  if (ps.contains(name + ".lora_A")) {
    out = lora_apply(out, x, ps.get(name + ".lora_A"), ps.get(name + ".lora_B"), static_cast<T>(model.config.lora_alpha));
  }
  return out;
}

std::vector<double> pos_embed_2d(std::size_t gh, std::size_t gw, std::size_t d) {
  if (d % 4 != 0) fail(ErrorCode::BadParam, "2-D position embedding needs d divisible by 4");
  const std::size_t bands = d / 4;
  std::vector<double> out(gh * gw * d);
  for (std::size_t y = 0; y < gh; ++y)
    for (std::size_t x = 0; x < gw; ++x) {
      double* row = &out[(y * gw + x) * d];
      for (std::size_t k = 0; k < bands; ++k) {
        const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(bands));
        row[k] = std::sin(static_cast<double>(y) * freq);
        row[bands + k] = std::cos(static_cast<double>(y) * freq);
        row[2 * bands + k] = std::sin(static_cast<double>(x) * freq);
        row[3 * bands + k] = std::cos(static_cast<double>(x) * freq);
      }
    }
  return out;
}

std::vector<double> pos_embed_1d(std::size_t position, std::size_t d) {
  const std::size_t half = d / 2;
  std::vector<double> out(d, 0.0);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    out[k] = std::sin(static_cast<double>(position) * freq);
    out[half + k] = std::cos(static_cast<double>(position) * freq);
  }
  return out;
}

std::vector<double> timestep_sinusoid(double t, std::size_t d) {
  if (!(t >= 0.0 && t <= 1.0)) fail(ErrorCode::BadParam, "timestep must lie in [0,1]");
  const std::size_t half = d / 2;
  std::vector<double> out(d, 0.0);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(d));
    out[k] = std::sin(1000.0 * t * freq);
    out[half + k] = std::cos(1000.0 * t * freq);
  }
  return out;
}

template <typename T>
Tensor<T> timestep_embed(const DiTModel<T>& model, double t) {
  const std::size_t d = model.config.d_model;
  auto s = const_tensor<T>({1, d}, timestep_sinusoid(t, d));
  return linear(model, "time_mlp.fc2", silu(linear(model, "time_mlp.fc1", s)));
}

std::vector<double> patchify(const LatentGrid& lat, std::size_t p) {
  if (p == 0 || lat.height % p != 0 || lat.width % p != 0) {
    fail(ErrorCode::IndivisibleDims, "latent " + std::to_string(lat.height) + "x" + std::to_string(lat.width) +
                                         " not divisible by patch " + std::to_string(p));
  }
  const std::size_t gh = lat.height / p, gw = lat.width / p, c = lat.channels;
  const std::size_t pd = p * p * c;
  std::vector<double> rows(gh * gw * pd);
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      double* row = &rows[(gy * gw + gx) * pd];
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px)
          for (std::size_t k = 0; k < c; ++k) row[(py * p + px) * c + k] = lat.at(gy * p + py, gx * p + px, k);
    }
  return rows;
}

LatentGrid unpatchify(std::span<const double> rows, std::size_t gh, std::size_t gw, std::size_t p, std::size_t c) {
  const std::size_t pd = p * p * c;
  if (rows.size() != gh * gw * pd) fail(ErrorCode::ShapeMismatch, "patch rows do not match the grid");
  LatentGrid lat(gh * p, gw * p, c);
  for (std::size_t gy = 0; gy < gh; ++gy)
    for (std::size_t gx = 0; gx < gw; ++gx) {
      const double* row = &rows[(gy * gw + gx) * pd];
      for (std::size_t py = 0; py < p; ++py)
        for (std::size_t px = 0; px < p; ++px)
          for (std::size_t k = 0; k < c; ++k) lat.at(gy * p + py, gx * p + px, k) = static_cast<float>(row[(py * p + px) * c + k]);
    }
  return lat;
}

template <typename T>
LatentGrid unpatchify(const Tensor<T>& rows, const LatentGrid& like, std::size_t p) {
  std::vector<double> v(rows.data().begin(), rows.data().end());
  return unpatchify(v, like.height / p, like.width / p, p, like.channels);
}

template <typename T>
Tensor<T> embed_patches(const DiTModel<T>& model, const std::string& embedder, const LatentGrid& lat) {
  const auto& cfg = model.config;
  if (lat.channels != cfg.latent_channels()) fail(ErrorCode::ShapeMismatch, "latent channels do not match the model");
  const std::size_t p = cfg.patch;
  const auto rows = patchify(lat, p);
  const std::size_t n = rows.size() / cfg.patch_dim();
  auto x = const_tensor<T>({n, cfg.patch_dim()}, rows);
  auto pos = const_tensor<T>({n, cfg.d_model}, pos_embed_2d(lat.height / p, lat.width / p, cfg.d_model));
  return add(linear(model, embedder, x), pos);
}

namespace {

template <typename T>
Tensor<T> attention(const DiTModel<T>& m, const std::string& b, const Tensor<T>& h, const AttnMask& mask) {
  const std::size_t d = m.config.d_model, nh = m.config.n_heads, dh = m.config.head_dim();
  const auto qkv = linear(m, b + ".attn.qkv", h);
  const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  std::vector<Tensor<T>> heads;
  heads.reserve(nh);
  for (std::size_t k = 0; k < nh; ++k) {
    auto q = slice_cols(qkv, k * dh, (k + 1) * dh);
    auto key = slice_cols(qkv, d + k * dh, d + (k + 1) * dh);
    auto v = slice_cols(qkv, 2 * d + k * dh, 2 * d + (k + 1) * dh);
    auto probs = softmax_masked(scale(matmul_nt(q, key), inv), mask.bits());
    heads.push_back(matmul(probs, v));
  }
  return linear(m, b + ".attn.proj", nh == 1 ? heads[0] : concat_cols(heads));
}

}  // namespace

template <typename T>
Tensor<T> embed_sequence(const DiTModel<T>& model, const ForwardInputs& in) {
  if (!in.layout || !in.noisy || !in.cond[0] || !in.cond[1]) {
    fail(ErrorCode::MissingInput, "forward needs a layout, two condition latents and a noisy latent");
  }
  const auto& cfg = model.config;
  const auto& layout = *in.layout;
  const std::size_t n = layout.length();
  const std::size_t d = cfg.d_model;
  if (n > cfg.max_seq) fail(ErrorCode::SeqTooLong, "sequence of " + std::to_string(n) + " exceeds max_seq " + std::to_string(cfg.max_seq));

  const auto temb = timestep_embed(model, in.t);
  std::vector<Tensor<T>> parts;
  parts.reserve(layout.segments.size());
  for (const auto& seg : layout.segments) {
    switch (seg.kind) {
      case SegmentKind::Text: {
        std::vector<int> ids(layout.tokens.begin() + static_cast<std::ptrdiff_t>(seg.begin),
                             layout.tokens.begin() + static_cast<std::ptrdiff_t>(seg.end));
        for (int id : ids)
          if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) fail(ErrorCode::BadParam, "token id outside vocabulary");
        std::vector<double> pos(seg.size() * d);
        for (std::size_t i = 0; i < seg.size(); ++i) {
          const auto row = pos_embed_1d(seg.begin + i, d);
          std::copy(row.begin(), row.end(), pos.begin() + static_cast<std::ptrdiff_t>(i * d));
        }
        parts.push_back(add(gather_rows(model.params.get("tok_embed"), std::span<const int>(ids)),
                            const_tensor<T>({seg.size(), d}, pos)));
        break;
      }
      case SegmentKind::CondImage: {
        auto tokens = embed_patches(model, "cond_embed", *in.cond[static_cast<std::size_t>(seg.image_index)]);
        if (tokens.rows() != seg.size()) fail(ErrorCode::ShapeMismatch, "condition image span does not match its patch count");
        parts.push_back(tokens);
        break;
      }
      case SegmentKind::NoisyImage: {
        auto tokens = embed_patches(model, "noisy_embed", *in.noisy);
        if (tokens.rows() != seg.size()) fail(ErrorCode::ShapeMismatch, "noisy image span does not match its patch count");
        if (cfg.time_in_noisy) tokens = add_bias(tokens, reshape(temb, {d}));
        parts.push_back(tokens);
        break;
      }
      case SegmentKind::Timestep: parts.push_back(temb); break;
    }
  }
  return concat_rows(parts);
}

template <typename T>
Tensor<T> transformer_readout(const DiTModel<T>& model, const Tensor<T>& tokens, const SequenceLayout& layout,
                              const AttnMask& mask) {
  const auto& cfg = model.config;
  if (mask.size() != layout.length() || tokens.rows() != layout.length()) {
    fail(ErrorCode::ShapeMismatch, "attention mask does not match the layout length");
  }
  auto h = tokens;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto b = block(l);
    h = add(h, attention(model, b, ln(model, b + ".ln1", h), mask));
    h = add(h, linear(model, b + ".mlp.fc2", silu(linear(model, b + ".mlp.fc1", ln(model, b + ".ln2", h)))));
  }
  const auto& noisy = layout.noisy();
  auto out = slice_rows(h, noisy.begin, noisy.end);
  return linear(model, "head", ln(model, "final_ln", out));
}

template <typename T>
Tensor<T> forward(const DiTModel<T>& model, const ForwardInputs& in) {
  if (!in.mask) fail(ErrorCode::MissingInput, "forward needs an attention mask");
  return transformer_readout(model, embed_sequence(model, in), *in.layout, *in.mask);
}

template <typename T>
LatentGrid forward_latent(const DiTModel<T>& model, const ForwardInputs& in) {
  return unpatchify(forward(model, in), *in.noisy, model.config.patch);
}

template <typename To, typename From>
DiTModel<To> cast_model(const DiTModel<From>& model) {
  DiTModel<To> out;
  out.config = model.config;
  for (const auto& p : model.params.all()) {
    std::vector<To> data(p.value.data().begin(), p.value.data().end());
    auto& added = out.params.add(p.name, Tensor<To>(p.value.shape(), std::move(data), p.trainable), p.lora);
    (void)added;
    out.params.param(p.name).trainable = p.trainable;
  }
  return out;
}

#define DITFUSE_INSTANTIATE_DIT(T)                                                                                  \
  template class ParamStore<T>;                                                                                     \
  template struct DiTModel<T>;                                                                                      \
  template Tensor<T> lora_apply(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);          \
  template Tensor<T> merge_lora(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);                            \
  template Tensor<T> linear(const DiTModel<T>&, const std::string&, const Tensor<T>&);                                \
  template Tensor<T> timestep_embed(const DiTModel<T>&, double);                                                     \
  template LatentGrid unpatchify(const Tensor<T>&, const LatentGrid&, std::size_t);                                  \
  template Tensor<T> embed_patches(const DiTModel<T>&, const std::string&, const LatentGrid&);                       \
  template Tensor<T> embed_sequence(const DiTModel<T>&, const ForwardInputs&);                                       \
  template Tensor<T> transformer_readout(const DiTModel<T>&, const Tensor<T>&, const SequenceLayout&, const AttnMask&); \
  template Tensor<T> forward(const DiTModel<T>&, const ForwardInputs&);                                              \
  template LatentGrid forward_latent(const DiTModel<T>&, const ForwardInputs&);

DITFUSE_INSTANTIATE_DIT(float)
DITFUSE_INSTANTIATE_DIT(double)

template DiTModel<double> cast_model(const DiTModel<float>&);
template DiTModel<float> cast_model(const DiTModel<double>&);
template DiTModel<float> cast_model(const DiTModel<float>&);
template DiTModel<double> cast_model(const DiTModel<double>&);

}  // namespace ditfuse
