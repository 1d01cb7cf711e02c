#include "ditfuse/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include <zlib.h>

#include "ditfuse/error.hpp"

namespace ditfuse {

template <typename T>
void adamw_update(ParamStore<T>& params, AdamState<T>& state, const AdamWConfig& cfg) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto* p : params.trainable()) {
    auto& m = state.m[p->name];
    auto& v = state.v[p->name];
    const std::size_t n = p->value.numel();
    if (m.size() != n) m.assign(n, T(0));
    if (v.size() != n) v.assign(n, T(0));
    if (!p->value.has_grad()) continue;
    const auto g = p->value.grad();
    auto w = p->value.mutable_data();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps) + cfg.weight_decay * w[i];
      w[i] = static_cast<T>(w[i] - cfg.lr * update);
    }
  }
  params.zero_grad();
}

template <typename T>
double optimizer_step(ParamStore<T>& params, AdamState<T>& state, const AdamWConfig& cfg,
                      const std::function<Tensor<T>()>& loss_fn) {
  Tensor<T> loss;
  try {
    loss = loss_fn();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NonFinite) fail(ErrorCode::NonFiniteLoss, e.what());
    throw;
  }
  const double value = loss.item();
  if (!std::isfinite(value)) fail(ErrorCode::NonFiniteLoss, "loss is not finite");
  params.zero_grad();
  try {
    loss.backward();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NonFinite) fail(ErrorCode::NonFiniteLoss, e.what());
    throw;
  }
  adamw_update(params, state, cfg);
  return value;
}

template void adamw_update(ParamStore<float>&, AdamState<float>&, const AdamWConfig&);
template void adamw_update(ParamStore<double>&, AdamState<double>&, const AdamWConfig&);
template double optimizer_step(ParamStore<float>&, AdamState<float>&, const AdamWConfig&, const std::function<Tensor<float>()>&);
template double optimizer_step(ParamStore<double>&, AdamState<double>&, const AdamWConfig&, const std::function<Tensor<double>()>&);

// ---------------------------------------------------------------------------

TrainerState TrainerState::create(const Config& config) {
  config.validate();
  TrainerState s{config, DiTModel<float>::init(config.model, derive_seed(config.train.seed, 1)), {}, 0,
                 Rng(derive_seed(config.train.seed, 2))};
  s.apply_trainable();
  return s;
}

void TrainerState::apply_trainable() {
  model.params.set_trainable(config.train.full_finetune);
  if (model.params.trainable().empty()) fail(ErrorCode::ConfigError, "no trainable tensors: set lora_rank > 0 or full_finetune");
}

double train_step(TrainerState& state, std::span<const TrainSample* const> batch) {
  if (batch.empty()) fail(ErrorCode::EmptyManifest, "training batch is empty");
  const auto& cfg = state.config;
  const std::size_t p = cfg.model.patch;
  AdamWConfig opt;
  opt.lr = cfg.train.lr;

  auto loss_fn = [&]() {
    Tensor<float> total;
    for (const auto* s : batch) {
      const double t = state.rng.uniform();
      auto [tokens, dropped] = drop_condition(s->tokens, cfg.train.cond_dropout, state.rng);
      (void)dropped;
      const LatentGrid eps = normal_like(s->target, state.rng);
      const LatentGrid xt = interpolate(s->target, eps, t);

      const std::size_t na = (s->cond_a.height / p) * (s->cond_a.width / p);
      const std::size_t nb = (s->cond_b.height / p) * (s->cond_b.width / p);
      const std::size_t nx = (s->target.height / p) * (s->target.width / p);
      const auto layout = assemble_sequence(tokens, {na, nb}, nx);
      const auto mask = build_attention_mask(layout);
      ForwardInputs in;
      in.layout = &layout;
      in.mask = &mask;
      in.cond = {&s->cond_a, &s->cond_b};
      in.noisy = &xt;
      in.t = t;
      const auto v = forward(state.model, in);
      const auto loss = fm_loss(v, patchify(s->target, p), patchify(eps, p));
      total = total.defined() ? add(total, loss) : loss;
    }
    return scale(total, 1.0f / static_cast<float>(batch.size()));
  };
  const double loss = optimizer_step<float>(state.model.params, state.adam, opt, loss_fn);
  ++state.step;
  return loss;
}

std::vector<TrainSample> load_samples(const Manifest& manifest, const std::filesystem::path& root, const Codec& codec) {
  std::vector<TrainSample> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) {
    TrainSample s;
    s.id = r.id;
    s.tokens = tokenize(r.prompt);
    s.cond_a = codec.encode(read_png(root / r.path_a));
    s.cond_b = codec.encode(read_png(root / r.path_b));
    s.target = codec.encode(read_png(root / r.path_target));
    if (!s.cond_a.same_shape(s.cond_b) || !s.cond_a.same_shape(s.target)) {
      fail(ErrorCode::ShapeMismatch, "sample " + r.id + " has images of different sizes");
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint encoding: little-endian throughout.

namespace {

constexpr char kMagic[4] = {'D', 'I', 'T', 'F'};
constexpr std::uint8_t kDtypeF32 = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename U>
  void le(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void str(const std::string& s) {
    le(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void f32s(std::span<const float> v) {
    for (float f : v) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      le(u);
    }
  }
  std::vector<std::uint8_t>& buf() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) fail(ErrorCode::CrcMismatch, "checkpoint truncated");
  }
  template <typename U>
  U le() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  std::string str() {
    const auto n = le<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<float> f32s(std::size_t n) {
    need(n * 4);
    std::vector<float> v(n);
    for (auto& f : v) {
      const auto u = le<std::uint32_t>();
      std::memcpy(&f, &u, 4);
    }
    return v;
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Shape& shape, std::span<const float> data) {
  w.str(name);
  w.le(kDtypeF32);
  w.le(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.le(static_cast<std::uint64_t>(d));
  w.f32s(data);
}

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - off, 1u << 30);
    crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const TrainerState& state) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le(kCheckpointVersion);
  w.str(state.config.canonical());
  w.le(static_cast<std::uint64_t>(state.step));
  w.str(state.rng.serialize());

  const auto& params = state.model.params.all();
  std::uint32_t count = static_cast<std::uint32_t>(params.size());
  for (const auto& p : params)
    if (state.adam.m.count(p.name)) count += 2;
  w.le(count);
  for (const auto& p : params) write_tensor(w, "param/" + p.name, p.value.shape(), p.value.data());
  for (const auto& p : params) {
    auto m = state.adam.m.find(p.name);
    if (m == state.adam.m.end()) continue;
    write_tensor(w, "adam_m/" + p.name, p.value.shape(), m->second);
    write_tensor(w, "adam_v/" + p.name, p.value.shape(), state.adam.v.at(p.name));
  }
  w.le(crc_of(w.buf()));
  return std::move(w.buf());
}

TrainerState deserialize_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) fail(ErrorCode::CrcMismatch, "checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorCode::BadMagic, "not a checkpoint file");
  const auto body = bytes.first(bytes.size() - 4);
  Reader tail(bytes.last(4));
  if (crc_of(body) != tail.le<std::uint32_t>()) fail(ErrorCode::CrcMismatch, "checkpoint CRC mismatch");

  Reader r(body);
  r.le<std::uint32_t>();  // magic, already checked
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    fail(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  }
  const Config config = Config::from_string(r.str());
  TrainerState state = TrainerState::create(config);
  state.step = r.le<std::uint64_t>();
  state.adam.step = state.step;
  state.rng = Rng::deserialize(r.str());

  const auto count = r.le<std::uint32_t>();
  std::size_t params_seen = 0;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = r.str();
    const auto dtype = r.le<std::uint8_t>();
    if (dtype != kDtypeF32) fail(ErrorCode::IoError, "unsupported dtype in tensor " + name);
    const auto rank = r.le<std::uint32_t>();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(r.le<std::uint64_t>()));
    const auto slash = name.find('/');
    if (slash == std::string::npos) fail(ErrorCode::IoError, "bad tensor name " + name);
    const std::string kind = name.substr(0, slash), pname = name.substr(slash + 1);
    auto& param = state.model.params.param(pname);
    if (param.value.shape() != shape) fail(ErrorCode::IoError, "tensor " + name + " has shape " + shape_str(shape));
    auto data = r.f32s(shape_numel(shape));
    if (kind == "param") {
      param.value = Tensor<float>(shape, std::move(data), param.trainable);
      ++params_seen;
    } else if (kind == "adam_m") {
      state.adam.m[pname] = std::move(data);
    } else if (kind == "adam_v") {
      state.adam.v[pname] = std::move(data);
    } else {
      fail(ErrorCode::IoError, "unknown tensor kind " + kind);
    }
  }
  if (!r.done()) fail(ErrorCode::IoError, "trailing bytes in checkpoint");
  if (params_seen != state.model.params.size()) fail(ErrorCode::IoError, "checkpoint lacks model tensors");
  return state;
}

void save_checkpoint(const TrainerState& state, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(state);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::IoError, "cannot write checkpoint " + path.string());
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(ErrorCode::IoError, "write failed for " + path.string());
}

TrainerState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// ---------------------------------------------------------------------------

std::uint64_t planned_steps(const Config& config, std::size_t n_samples) {
  const std::size_t per_epoch = (n_samples + config.train.batch - 1) / config.train.batch;
  return static_cast<std::uint64_t>(per_epoch) * config.train.epochs;
}

std::vector<std::size_t> batch_indices(const Config& config, std::size_t n_samples, std::uint64_t step) {
  if (n_samples == 0) fail(ErrorCode::EmptyManifest, "no training samples");
  const std::size_t batch = config.train.batch;
  const std::size_t per_epoch = (n_samples + batch - 1) / batch;
  const std::uint64_t epoch = step / per_epoch;
  const std::size_t b = static_cast<std::size_t>(step % per_epoch);
  std::vector<std::size_t> order(n_samples);
  std::iota(order.begin(), order.end(), 0);
  Rng(config.train.seed).split(1000 + epoch).shuffle(order.begin(), order.end());
  const std::size_t begin = b * batch, end = std::min(n_samples, begin + batch);
  return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

RunResult run_training(TrainerState& state, const std::vector<TrainSample>& samples, const RunOptions& options) {
  if (samples.empty()) fail(ErrorCode::EmptyManifest, "manifest has no samples");
  const std::uint64_t total = planned_steps(state.config, samples.size());
  const std::uint64_t stop = options.stop_at_step ? std::min(total, *options.stop_at_step) : total;

  std::ofstream log;
  if (options.loss_csv) {
    const bool append = state.step > 0 && std::filesystem::exists(*options.loss_csv);
    log.open(*options.loss_csv, append ? std::ios::app : std::ios::trunc);
    if (!log) fail(ErrorCode::IoError, "cannot write loss log " + options.loss_csv->string());
    if (!append) log << "step,loss,lr\n";
  }

  RunResult result;
  std::vector<const TrainSample*> batch;
  while (state.step < stop) {
    const std::uint64_t step = state.step;
    batch.clear();
    for (auto i : batch_indices(state.config, samples.size(), step)) batch.push_back(&samples[i]);
    const double loss = train_step(state, batch);
    result.losses.push_back(loss);
    if (log.is_open()) {
      char line[96];
      std::snprintf(line, sizeof line, "%llu,%.9g,%.9g\n", static_cast<unsigned long long>(step), loss, state.config.train.lr);
      log << line;
    }
    if (options.on_step) options.on_step(step, loss);
  }
  return result;
}

}  // namespace ditfuse
