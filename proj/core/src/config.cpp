#include "ditfuse/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "ditfuse/error.hpp"

namespace ditfuse {

using nlohmann::json;

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

[[noreturn]] void config_error(const std::string& what) { fail(ErrorCode::ConfigError, what); }

void reject_unknown(const json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) config_error(section + " must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) config_error("unknown key " + section + "." + it.key());
}

template <typename V>
void read(const json& j, const char* key, const std::string& section, V& out) {
  if (!j.contains(key)) return;
  try {
    const auto& v = j.at(key);
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) config_error(section + "." + key + " must be a boolean");
    } else if constexpr (std::is_unsigned_v<V>) {
      if (!v.is_number_unsigned()) config_error(section + "." + key + " must be a non-negative integer");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) config_error(section + "." + key + " must be a number");
    }
    out = v.get<V>();
  } catch (const json::exception& e) {
    config_error(section + "." + key + ": " + e.what());
  }
}

void read_range(const json& j, const char* key, const std::string& section, double& lo, double& hi) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    config_error(section + "." + key + " must be a [lo, hi] pair");
  }
  lo = v[0].get<double>();
  hi = v[1].get<double>();
}

}  // namespace

Config Config::from_json(const json& j) {
  Config c;
  reject_unknown(j, "config", {"model", "train", "data", "degrade", "sample"});
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m, "model", {"d_model", "n_layers", "n_heads", "latent_factor", "patch", "lora_rank", "lora_alpha",
                                "max_seq", "mlp_ratio", "time_in_noisy", "codec_seed"});
    read(m, "d_model", "model", c.model.d_model);
    read(m, "n_layers", "model", c.model.n_layers);
    read(m, "n_heads", "model", c.model.n_heads);
    read(m, "latent_factor", "model", c.model.latent_factor);
    read(m, "patch", "model", c.model.patch);
    read(m, "lora_rank", "model", c.model.lora_rank);
    read(m, "lora_alpha", "model", c.model.lora_alpha);
    read(m, "max_seq", "model", c.model.max_seq);
    read(m, "mlp_ratio", "model", c.model.mlp_ratio);
    read(m, "time_in_noisy", "model", c.model.time_in_noisy);
    read(m, "codec_seed", "model", c.model.codec_seed);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t, "train", {"lr", "batch", "epochs", "cond_dropout", "seed", "full_finetune"});
    read(t, "lr", "train", c.train.lr);
    read(t, "batch", "train", c.train.batch);
    read(t, "epochs", "train", c.train.epochs);
    read(t, "cond_dropout", "train", c.train.cond_dropout);
    read(t, "seed", "train", c.train.seed);
    read(t, "full_finetune", "train", c.train.full_finetune);
  }
  if (j.contains("data")) {
    const auto& d = j.at("data");
    reject_unknown(d, "data", {"mix_weights", "grid_sizes", "joint_fraction", "total", "image_size"});
    if (d.contains("mix_weights")) {
      const auto& w = d.at("mix_weights");
      reject_unknown(w, "data.mix_weights", {"m3", "seg", "control", "fusion"});
      read(w, "m3", "data.mix_weights", c.data.mix_weights[0]);
      read(w, "seg", "data.mix_weights", c.data.mix_weights[1]);
      read(w, "control", "data.mix_weights", c.data.mix_weights[2]);
      read(w, "fusion", "data.mix_weights", c.data.mix_weights[3]);
    }
    if (d.contains("grid_sizes")) {
      const auto& g = d.at("grid_sizes");
      if (!g.is_array() || g.empty()) config_error("data.grid_sizes must be a non-empty array");
      c.data.grid_sizes.clear();
      for (const auto& v : g) {
        if (!v.is_number_unsigned() || v.get<std::size_t>() == 0) config_error("data.grid_sizes entries must be positive integers");
        c.data.grid_sizes.push_back(v.get<std::size_t>());
      }
    }
    read(d, "joint_fraction", "data", c.data.joint_fraction);
    read(d, "total", "data", c.data.total);
    read(d, "image_size", "data", c.data.image_size);
  }
  if (j.contains("degrade")) {
    const auto& d = j.at("degrade");
    reject_unknown(d, "degrade", {"blur_sigma", "noise_sigma", "kinds"});
    read_range(d, "blur_sigma", "degrade", c.degrade.blur_sigma_lo, c.degrade.blur_sigma_hi);
    read_range(d, "noise_sigma", "degrade", c.degrade.noise_sigma_lo, c.degrade.noise_sigma_hi);
    if (d.contains("kinds")) {
      const auto& k = d.at("kinds");
      if (!k.is_array() || k.empty()) config_error("degrade.kinds must be a non-empty array");
      c.degrade.kinds.clear();
      for (const auto& v : k) {
        const auto name = v.is_string() ? v.get<std::string>() : std::string();
        if (name == "blur") c.degrade.kinds.push_back(DegradeKind::Blur);
        else if (name == "gauss_noise") c.degrade.kinds.push_back(DegradeKind::GaussNoise);
        else if (name == "noise_mask") c.degrade.kinds.push_back(DegradeKind::NoiseMask);
        else config_error("degrade.kinds entries must be blur, gauss_noise or noise_mask");
      }
    }
  }
  if (j.contains("sample")) {
    const auto& s = j.at("sample");
    reject_unknown(s, "sample", {"steps", "guidance"});
    read(s, "steps", "sample", c.sample.steps);
    read(s, "guidance", "sample", c.sample.guidance);
  }
  c.validate();
  return c;
}

Config Config::from_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(j);
}

Config Config::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorCode::IoError, "cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return from_string(ss.str());
}

json Config::to_json() const {
  json j;
  j["model"] = {{"d_model", model.d_model},
                {"n_layers", model.n_layers},
                {"n_heads", model.n_heads},
                {"latent_factor", model.latent_factor},
                {"patch", model.patch},
                {"lora_rank", model.lora_rank},
                {"lora_alpha", model.lora_alpha},
                {"max_seq", model.max_seq},
                {"mlp_ratio", model.mlp_ratio},
                {"time_in_noisy", model.time_in_noisy},
                {"codec_seed", model.codec_seed}};
  j["train"] = {{"lr", train.lr},
                {"batch", train.batch},
                {"epochs", train.epochs},
                {"cond_dropout", train.cond_dropout},
                {"seed", train.seed},
                {"full_finetune", train.full_finetune}};
  j["data"] = {{"mix_weights",
                {{"m3", data.mix_weights[0]}, {"seg", data.mix_weights[1]}, {"control", data.mix_weights[2]}, {"fusion", data.mix_weights[3]}}},
               {"grid_sizes", data.grid_sizes},
               {"joint_fraction", data.joint_fraction},
               {"total", data.total},
               {"image_size", data.image_size}};
  json kinds = json::array();
  for (auto k : degrade.kinds) {
    switch (k) {
      case DegradeKind::Blur: kinds.push_back("blur"); break;
      case DegradeKind::GaussNoise: kinds.push_back("gauss_noise"); break;
      case DegradeKind::NoiseMask: kinds.push_back("noise_mask"); break;
    }
  }
  j["degrade"] = {{"blur_sigma", {degrade.blur_sigma_lo, degrade.blur_sigma_hi}},
                  {"noise_sigma", {degrade.noise_sigma_lo, degrade.noise_sigma_hi}},
                  {"kinds", kinds}};
  j["sample"] = {{"steps", sample.steps}, {"guidance", sample.guidance}};
  return j;
}

std::string Config::canonical() const { return to_json().dump(); }

std::uint64_t Config::hash() const { return fnv1a64(canonical()); }

std::string Config::hash_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

SynthesisConfig Config::synthesis() const {
  SynthesisConfig s;
  s.grid_sizes = data.grid_sizes;
  s.joint_fraction = data.joint_fraction;
  s.degrade = degrade;
  return s;
}

void Config::validate() const {
  model.validate();
  if (!(train.lr >= 0.0) || !std::isfinite(train.lr)) config_error("train.lr must be a finite non-negative number");
  if (train.batch == 0) config_error("train.batch must be positive");
  if (!(train.cond_dropout >= 0.0 && train.cond_dropout <= 1.0)) config_error("train.cond_dropout must be in [0,1]");
  double wsum = 0;
  for (double w : data.mix_weights) {
    if (!(w >= 0.0)) config_error("data.mix_weights must be non-negative");
    wsum += w;
  }
  if (std::fabs(wsum - 1.0) > 1e-6) config_error("data.mix_weights must sum to 1");
  if (!(data.joint_fraction >= 0.0 && data.joint_fraction <= 1.0)) config_error("data.joint_fraction must be in [0,1]");
  if (data.image_size == 0 || data.image_size % (model.latent_factor * model.patch) != 0) {
    config_error("data.image_size must be a positive multiple of latent_factor·patch");
  }
  if (!(degrade.blur_sigma_lo > 0.0 && degrade.blur_sigma_lo <= degrade.blur_sigma_hi)) config_error("degrade.blur_sigma must satisfy 0 < lo <= hi");
  if (!(degrade.noise_sigma_lo >= 0.0 && degrade.noise_sigma_lo <= degrade.noise_sigma_hi)) config_error("degrade.noise_sigma must satisfy 0 <= lo <= hi");
  if (sample.steps == 0) config_error("sample.steps must be >= 1");
  if (!std::isfinite(sample.guidance)) config_error("sample.guidance must be finite");
}

}  // namespace ditfuse
