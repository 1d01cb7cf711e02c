#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ditfuse/error.hpp"
#include "ditfuse/train.hpp"
#include "support.hpp"

using namespace ditfuse;
using namespace ditfuse::test;

namespace {

Config tiny_config() {
  Config c;
  c.model.d_model = 8;
  c.model.n_layers = 1;
  c.model.n_heads = 2;
  c.model.lora_rank = 2;
  c.train.batch = 2;
  c.train.epochs = 3;
  c.train.lr = 1e-3;
  c.train.seed = 11;
  return c;
}

std::vector<TrainSample> make_samples(std::size_t n, std::uint64_t seed, std::size_t side = 4) {
  Rng rng(seed);
  auto latent = [&] {
    LatentGrid g(side, side, 12);
    for (auto& v : g.data) v = static_cast<float>(rng.normal());
    return g;
  };
  std::vector<TrainSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    TrainSample s;
    s.id = "s" + std::to_string(i);
    s.tokens = tokenize(i % 2 ? "[FUSION] <img><|image_1|></img> <img><|image_2|></img>"
                              : "[CONTROL] <LIGHT+> <img><|image_1|></img> <img><|image_2|></img> brighten");
    s.cond_a = latent();
    s.cond_b = latent();
    s.target = latent();
    out.push_back(std::move(s));
  }
  return out;
}

std::map<std::string, std::vector<float>> snapshot(const TrainerState& s, bool lora) {
  std::map<std::string, std::vector<float>> out;
  for (const auto& p : s.model.params.all())
    if (p.lora == lora) out[p.name].assign(p.value.data().begin(), p.value.data().end());
  return out;
}

// Bitwise reflected CRC-32 (polynomial 0xEDB88320), independent of zlib.
std::uint32_t reference_crc(std::span<const std::uint8_t> bytes) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (auto b : bytes) {
    crc ^= b;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::BadParam;
}

}  // namespace

// ---------------------------------------------------------------- optimizer

TEST(AdamW, LinearModelFirstStep) {
  ParamStore<double> ps;
  ps.add("theta", Tensor<double>({1, 1}, {0.0}));
  ps.set_trainable(true);
  AdamState<double> st;
  AdamWConfig cfg;
  const std::vector<double> x = {1.0}, eps = {0.0};
  const double loss = optimizer_step<double>(ps, st, cfg, [&] { return fm_loss(ps.get("theta"), x, eps); });
  EXPECT_DOUBLE_EQ(loss, 1.0);
  // g = -2; m̂ = -2, v̂ = 4, so the step is lr·2/(2+eps).
  EXPECT_NEAR(ps.get("theta")[0], 1e-4 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_FALSE(ps.get("theta").has_grad() && ps.get("theta").grad()[0] != 0.0);
}

TEST(AdamW, MatchesReferenceOverManySteps) {
  Rng rng(1);
  ParamStore<double> ps;
  ps.add("w", random_tensor<double>({3, 2}, rng));
  ps.set_trainable(true);
  AdamState<double> st;
  AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.1;

  std::vector<double> w(ps.get("w").data().begin(), ps.get("w").data().end());
  std::vector<double> m(6, 0), v(6, 0);
  for (int step = 1; step <= 30; ++step) {
    std::vector<double> target(6);
    for (auto& t : target) t = rng.normal();
    std::vector<double> zeros(6, 0.0);
    optimizer_step<double>(ps, st, cfg, [&] { return fm_loss(ps.get("w"), target, zeros); });
    for (std::size_t i = 0; i < 6; ++i) {
      const double g = 2.0 * (w[i] - target[i]) / 6.0;
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
      w[i] -= cfg.lr * (mh / (std::sqrt(vh) + cfg.eps) + cfg.weight_decay * w[i]);
    }
  }
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(ps.get("w")[i], w[i], 1e-12);
  EXPECT_EQ(st.step, 30u);
}

TEST(AdamW, FrozenTensorsUntouched) {
  ParamStore<double> ps;
  ps.add("base", Tensor<double>({1, 2}, {1.0, 2.0}));
  ps.add("adapter", Tensor<double>({1, 2}, {0.0, 0.0}), true);
  ps.set_trainable(false);
  AdamState<double> st;
  const std::vector<double> x = {3, 4}, e = {0, 0};
  optimizer_step<double>(ps, st, AdamWConfig{}, [&] { return fm_loss(add(ps.get("base"), ps.get("adapter")), x, e); });
  EXPECT_EQ(ps.get("base")[0], 1.0);
  EXPECT_EQ(ps.get("base")[1], 2.0);
  EXPECT_GT(ps.get("adapter")[0], 0.0);
  EXPECT_EQ(st.m.count("base"), 0u);
  EXPECT_EQ(st.m.count("adapter"), 1u);
}

TEST(AdamW, NonFiniteLossRejectedBeforeUpdate) {
  ParamStore<double> ps;
  ps.add("theta", Tensor<double>({1, 1}, {0.0}));
  ps.set_trainable(true);
  AdamState<double> st;
  const std::vector<double> x = {std::numeric_limits<double>::infinity()}, e = {0.0};
  EXPECT_EQ(code_of([&] { optimizer_step<double>(ps, st, AdamWConfig{}, [&] { return fm_loss(ps.get("theta"), x, e); }); }),
            ErrorCode::NonFiniteLoss);
  EXPECT_EQ(ps.get("theta")[0], 0.0);
  EXPECT_EQ(st.step, 0u);
}

// ---------------------------------------------------------------- train_step

TEST(TrainStep, ZeroLearningRateKeepsParams) {
  auto cfg = tiny_config();
  cfg.train.lr = 0.0;
  auto st = TrainerState::create(cfg);
  const auto before = snapshot(st, true);
  const auto samples = make_samples(2, 3);
  std::vector<const TrainSample*> batch = {&samples[0], &samples[1]};
  const double loss = train_step(st, batch);
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_GT(loss, 0.0);
  EXPECT_EQ(snapshot(st, true), before);
  EXPECT_EQ(st.step, 1u);
}

TEST(TrainStep, Deterministic) {
  const auto samples = make_samples(6, 4);
  auto run = [&] {
    auto st = TrainerState::create(tiny_config());
    return run_training(st, samples).losses;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 9u);
  EXPECT_EQ(a, b);
}

TEST(TrainStep, EmptyBatch) {
  auto st = TrainerState::create(tiny_config());
  EXPECT_EQ(code_of([&] { train_step(st, {}); }), ErrorCode::EmptyManifest);
}

TEST(TrainStep, NonFiniteTarget) {
  auto st = TrainerState::create(tiny_config());
  auto samples = make_samples(1, 5);
  samples[0].target.data[3] = std::numeric_limits<float>::quiet_NaN();
  const auto before = snapshot(st, true);
  std::vector<const TrainSample*> batch = {&samples[0]};
  EXPECT_EQ(code_of([&] { train_step(st, batch); }), ErrorCode::NonFiniteLoss);
  EXPECT_EQ(snapshot(st, true), before);
}

TEST(TrainStep, LossDecreasesOnTinyOverfit) {
  auto cfg = tiny_config();
  cfg.model.d_model = 16;
  cfg.train.full_finetune = true;
  cfg.train.epochs = 150;
  cfg.train.lr = 3e-3;
  const auto samples = make_samples(2, 6);
  auto st = TrainerState::create(cfg);
  const auto losses = run_training(st, samples).losses;
  auto window = [&](std::size_t b, std::size_t e) {
    double s = 0;
    for (std::size_t i = b; i < e; ++i) s += losses[i];
    return s / static_cast<double>(e - b);
  };
  EXPECT_LT(window(losses.size() - 20, losses.size()), 0.8 * window(0, 20));
}

TEST(TrainStep, BaseWeightsFrozenAcrossRun) {
  auto cfg = tiny_config();
  cfg.train.epochs = 250;
  const auto samples = make_samples(4, 7);
  auto st = TrainerState::create(cfg);
  const auto base = snapshot(st, false);
  const auto lora = snapshot(st, true);
  run_training(st, samples);
  EXPECT_EQ(st.step, 500u);
  EXPECT_EQ(snapshot(st, false), base);
  EXPECT_NE(snapshot(st, true), lora);

  std::set<std::string> moment_keys, lora_names;
  for (const auto& [k, _] : st.adam.m) moment_keys.insert(k);
  for (const auto& p : st.model.params.all())
    if (p.lora) lora_names.insert(p.name);
  EXPECT_EQ(moment_keys, lora_names);
}

TEST(TrainStep, FullFinetuneMovesBase) {
  auto cfg = tiny_config();
  cfg.train.full_finetune = true;
  cfg.train.epochs = 1;
  auto st = TrainerState::create(cfg);
  const auto base = snapshot(st, false);
  run_training(st, make_samples(2, 8));
  const auto after = snapshot(st, false);
  EXPECT_NE(after, base);
  EXPECT_EQ(after.at("codec.q"), base.at("codec.q"));
}

TEST(TrainStep, NoTrainableTensors) {
  auto cfg = tiny_config();
  cfg.model.lora_rank = 0;
  EXPECT_EQ(code_of([&] { TrainerState::create(cfg); }), ErrorCode::ConfigError);
}

// ---------------------------------------------------------------- schedule

TEST(Schedule, PlannedSteps) {
  auto cfg = tiny_config();
  cfg.train.batch = 4;
  cfg.train.epochs = 2;
  EXPECT_EQ(planned_steps(cfg, 8), 4u);
  EXPECT_EQ(planned_steps(cfg, 9), 6u);
  EXPECT_EQ(planned_steps(cfg, 1), 2u);
}

TEST(Schedule, EpochIsPermutationAndReshuffles) {
  auto cfg = tiny_config();
  cfg.train.batch = 3;
  const std::size_t n = 20;
  const std::size_t per_epoch = 7;
  std::vector<std::vector<std::size_t>> epochs;
  for (std::uint64_t e = 0; e < 3; ++e) {
    std::vector<std::size_t> order;
    for (std::size_t b = 0; b < per_epoch; ++b) {
      auto idx = batch_indices(cfg, n, e * per_epoch + b);
      EXPECT_EQ(idx.size(), b + 1 < per_epoch ? 3u : 2u);
      order.insert(order.end(), idx.begin(), idx.end());
    }
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(sorted[i], i);
    epochs.push_back(order);
  }
  EXPECT_NE(epochs[0], epochs[1]);
  EXPECT_NE(epochs[1], epochs[2]);
  for (std::uint64_t s = 0; s < 21; ++s) EXPECT_EQ(batch_indices(cfg, n, s), batch_indices(cfg, n, s));

  auto other = cfg;
  other.train.seed = cfg.train.seed + 1;
  EXPECT_NE(batch_indices(cfg, n, 0), batch_indices(other, n, 0));
}

TEST(Schedule, EmptyManifest) {
  auto st = TrainerState::create(tiny_config());
  EXPECT_EQ(code_of([&] { run_training(st, {}); }), ErrorCode::EmptyManifest);
  EXPECT_EQ(st.step, 0u);
  EXPECT_EQ(code_of([&] { batch_indices(tiny_config(), 0, 0); }), ErrorCode::EmptyManifest);
}

TEST(Schedule, LossCsv) {
  TempDir dir("losscsv");
  const auto samples = make_samples(4, 9);
  auto st = TrainerState::create(tiny_config());
  RunOptions opt;
  opt.loss_csv = dir / "loss.csv";
  opt.stop_at_step = 3;
  std::vector<std::uint64_t> seen;
  opt.on_step = [&](std::uint64_t s, double) { seen.push_back(s); };
  auto r1 = run_training(st, samples, opt);
  auto r2 = run_training(st, samples, opt);
  EXPECT_TRUE(r2.losses.empty());
  opt.stop_at_step.reset();
  auto r3 = run_training(st, samples, opt);
  EXPECT_EQ(r1.losses.size() + r3.losses.size(), 6u);
  EXPECT_EQ(seen, (std::vector<std::uint64_t>{0, 1, 2, 3, 4, 5}));

  std::ifstream in(dir / "loss.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,loss,lr");
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string step, loss, lr;
    std::getline(ss, step, ',');
    std::getline(ss, loss, ',');
    std::getline(ss, lr, ',');
    EXPECT_EQ(std::stoi(step), rows);
    EXPECT_DOUBLE_EQ(std::stod(lr), 1e-3);
    ++rows;
  }
  EXPECT_EQ(rows, 6);
}

// ---------------------------------------------------------------- checkpoints

TEST(Checkpoint, RoundTripIsByteIdentical) {
  auto st = TrainerState::create(tiny_config());
  const auto fresh = serialize_checkpoint(st);
  EXPECT_EQ(serialize_checkpoint(deserialize_checkpoint(fresh)), fresh);

  run_training(st, make_samples(4, 10), {std::nullopt, 3, {}});
  const auto trained = serialize_checkpoint(st);
  const auto back = deserialize_checkpoint(trained);
  EXPECT_EQ(serialize_checkpoint(back), trained);
  EXPECT_EQ(back.step, 3u);
  EXPECT_EQ(snapshot(back, true), snapshot(st, true));
  EXPECT_EQ(snapshot(back, false), snapshot(st, false));
  EXPECT_EQ(back.adam.m, st.adam.m);
  EXPECT_EQ(back.adam.v, st.adam.v);
  EXPECT_EQ(back.config.canonical(), st.config.canonical());
}

TEST(Checkpoint, Layout) {
  auto st = TrainerState::create(tiny_config());
  const auto bytes = serialize_checkpoint(st);
  ASSERT_GT(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DITF");
  const std::uint32_t version = bytes[4] | bytes[5] << 8 | bytes[6] << 16 | static_cast<std::uint32_t>(bytes[7]) << 24;
  EXPECT_EQ(version, kCheckpointVersion);
  const std::size_t n = bytes.size();
  const std::uint32_t crc = bytes[n - 4] | bytes[n - 3] << 8 | bytes[n - 2] << 16 | static_cast<std::uint32_t>(bytes[n - 1]) << 24;
  EXPECT_EQ(crc, reference_crc(std::span(bytes).first(n - 4)));
}

TEST(Checkpoint, FileRoundTrip) {
  TempDir dir("ckpt");
  auto st = TrainerState::create(tiny_config());
  save_checkpoint(st, dir / "a.bin");
  auto back = load_checkpoint(dir / "a.bin");
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(st));
  EXPECT_EQ(code_of([&] { load_checkpoint(dir / "missing.bin"); }), ErrorCode::IoError);
  EXPECT_EQ(code_of([&] { save_checkpoint(st, dir / "no" / "such" / "dir.bin"); }), ErrorCode::IoError);
}

TEST(Checkpoint, Truncated) {
  auto st = TrainerState::create(tiny_config());
  auto bytes = serialize_checkpoint(st);
  for (std::size_t keep : {bytes.size() - 1, bytes.size() / 2, std::size_t{10}, std::size_t{0}}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep));
    EXPECT_EQ(code_of([&] { deserialize_checkpoint(cut); }), ErrorCode::CrcMismatch) << keep;
  }
}

TEST(Checkpoint, SingleByteCorruptionDetected) {
  auto st = TrainerState::create(tiny_config());
  const auto bytes = serialize_checkpoint(st);
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    auto bad = bytes;
    const std::size_t pos = 4 + rng.index(bytes.size() - 4);
    bad[pos] ^= static_cast<std::uint8_t>(1 + rng.index(255));
    EXPECT_EQ(code_of([&] { deserialize_checkpoint(bad); }), ErrorCode::CrcMismatch) << "byte " << pos;
  }
}

TEST(Checkpoint, BadMagicAndVersion) {
  auto st = TrainerState::create(tiny_config());
  auto bytes = serialize_checkpoint(st);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(code_of([&] { deserialize_checkpoint(bad); }), ErrorCode::BadMagic);

  auto v2 = bytes;
  v2[4] = static_cast<std::uint8_t>(kCheckpointVersion + 1);
  const std::size_t n = v2.size();
  const auto crc = reference_crc(std::span(v2).first(n - 4));
  for (int k = 0; k < 4; ++k) v2[n - 4 + k] = static_cast<std::uint8_t>(crc >> (8 * k));
  EXPECT_EQ(code_of([&] { deserialize_checkpoint(v2); }), ErrorCode::VersionMismatch);
}

TEST(Checkpoint, ResumeEquivalence) {
  TempDir dir("resume");
  const auto samples = make_samples(6, 13);
  auto cfg = tiny_config();
  cfg.train.epochs = 4;

  auto straight = TrainerState::create(cfg);
  const auto all = run_training(straight, samples, {std::nullopt, 20, {}}).losses;
  ASSERT_EQ(all.size(), 12u);

  auto first = TrainerState::create(cfg);
  run_training(first, samples, {std::nullopt, 2, {}});
  save_checkpoint(first, dir / "mid.bin");
  auto resumed = load_checkpoint(dir / "mid.bin");
  const auto tail = run_training(resumed, samples).losses;
  ASSERT_EQ(tail.size(), 10u);
  EXPECT_TRUE(std::equal(tail.begin(), tail.end(), all.begin() + 2));
  EXPECT_EQ(serialize_checkpoint(resumed), serialize_checkpoint(straight));
}
