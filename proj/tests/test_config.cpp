#include <gtest/gtest.h>

#include <fstream>

#include "ditfuse/config.hpp"
#include "ditfuse/error.hpp"
#include "support.hpp"

using namespace ditfuse;
using namespace ditfuse::test;

namespace {

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

TEST(Fnv1a, PublishedVectors) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ull);
}

TEST(Config, EmptyObjectGivesDefaults) {
  const auto c = Config::from_string("{}");
  const Config d;
  EXPECT_EQ(c.canonical(), d.canonical());
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-4);
  EXPECT_EQ(c.train.batch, 64u);
  EXPECT_EQ(c.train.epochs, 2u);
  EXPECT_DOUBLE_EQ(c.train.cond_dropout, 0.01);
  EXPECT_EQ(c.model.patch, 2u);
  EXPECT_DOUBLE_EQ(c.model.lora_alpha, 0.5);
  EXPECT_EQ(c.sample.steps, 32u);
  EXPECT_DOUBLE_EQ(c.sample.guidance, 1.0);
  EXPECT_DOUBLE_EQ(c.data.joint_fraction, 0.25);
}

TEST(Config, PartialOverride) {
  const auto c = Config::from_string(R"({"model": {"d_model": 32, "n_heads": 2}, "data": {"mix_weights": {"m3": 0.5, "seg": 0.3, "control": 0.15, "fusion": 0.05}}})");
  EXPECT_EQ(c.model.d_model, 32u);
  EXPECT_EQ(c.model.n_heads, 2u);
  EXPECT_EQ(c.model.n_layers, Config{}.model.n_layers);
  EXPECT_DOUBLE_EQ(c.data.mix_weights[3], 0.05);
}

TEST(Config, UnknownKeysRejected) {
  for (const char* text : {R"({"modle": {}})", R"({"model": {"depth": 3}})", R"({"train": {"lr": 1e-4, "momentum": 0.9}})",
                           R"({"data": {"mix_weights": {"m3": 1.0, "other": 0.0}}})", R"({"sample": {"steps": 4, "eta": 1}})"}) {
    EXPECT_EQ(code_of([&] { Config::from_string(text); }), ErrorCode::ConfigError) << text;
  }
}

TEST(Config, InvalidValuesRejected) {
  for (const char* text : {R"({"train": {"lr": -1}})", R"({"train": {"batch": 0}})", R"({"train": {"cond_dropout": 1.5}})",
                           R"({"train": {"batch": "eight"}})", R"({"train": {"full_finetune": 1}})",
                           R"({"data": {"mix_weights": {"m3": 0.5}}})", R"({"data": {"grid_sizes": []}})",
                           R"({"data": {"image_size": 30}})", R"({"model": {"n_heads": 5}})",
                           R"({"degrade": {"blur_sigma": [3, 1]}})", R"({"degrade": {"kinds": ["jpeg"]}})",
                           R"({"sample": {"steps": 0}})", "not json", "[]"}) {
    EXPECT_EQ(code_of([&] { Config::from_string(text); }), ErrorCode::ConfigError) << text;
  }
}

TEST(Config, RoundTripAndHash) {
  Config c;
  c.model.d_model = 32;
  c.train.seed = 99;
  c.train.full_finetune = true;
  c.data.grid_sizes = {8, 16};
  c.degrade.kinds = {DegradeKind::Blur};
  c.sample.guidance = 2.5;
  const auto back = Config::from_string(c.canonical());
  EXPECT_EQ(back.canonical(), c.canonical());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.hash(), fnv1a64(c.canonical()));
  EXPECT_EQ(c.hash_hex().size(), 16u);
  EXPECT_NE(c.hash(), Config{}.hash());

  // Whitespace and key order in the source do not matter.
  const auto a = Config::from_string(R"({"train": {"seed": 5, "lr": 0.001}})");
  const auto b = Config::from_string("{\n  \"train\" : { \"lr\" : 0.001 ,\n \"seed\" : 5 }\n}");
  EXPECT_EQ(a.hash(), b.hash());
}

TEST(Config, CanonicalIsCompactAndSorted) {
  const auto s = Config{}.canonical();
  EXPECT_EQ(s.find(' '), std::string::npos);
  EXPECT_EQ(s.find('\n'), std::string::npos);
  EXPECT_LT(s.find("\"data\""), s.find("\"degrade\""));
  EXPECT_LT(s.find("\"degrade\""), s.find("\"model\""));
  EXPECT_LT(s.find("\"model\""), s.find("\"sample\""));
  EXPECT_LT(s.find("\"sample\""), s.find("\"train\""));
}

TEST(Config, LoadFromFile) {
  TempDir dir("config");
  {
    std::ofstream os(dir / "c.json");
    os << R"({"train": {"epochs": 7}})";
  }
  EXPECT_EQ(Config::load((dir / "c.json").string()).train.epochs, 7u);
  EXPECT_EQ(code_of([&] { Config::load((dir / "missing.json").string()); }), ErrorCode::IoError);
}

TEST(Config, SynthesisView) {
  Config c;
  c.data.grid_sizes = {4, 8};
  c.data.joint_fraction = 0.5;
  const auto s = c.synthesis();
  EXPECT_EQ(s.grid_sizes, c.data.grid_sizes);
  EXPECT_DOUBLE_EQ(s.joint_fraction, 0.5);
  EXPECT_EQ(s.degrade.kinds.size(), c.degrade.kinds.size());
}
