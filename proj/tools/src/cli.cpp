#include "ditfuse_cli/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "ditfuse/config.hpp"
#include "ditfuse/flow.hpp"
#include "ditfuse/judge.hpp"
#include "ditfuse/m3.hpp"
#include "ditfuse/metrics.hpp"
#include "ditfuse/train.hpp"

namespace ditfuse::cli {

namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError:
    case ErrorCode::BadMagic:
    case ErrorCode::CrcMismatch:
    case ErrorCode::VersionMismatch:
    case ErrorCode::EmptyManifest:
    case ErrorCode::BackendTimeout:
    case ErrorCode::BackendMalformedReply:
    case ErrorCode::BackendError: return kExitIo;
    case ErrorCode::NonFinite:
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::NonFiniteState: return kExitNumeric;
    default: return kExitConfig;
  }
}

namespace {

std::size_t default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Runs fn(i) for i in [0, n) on `jobs` threads. Rethrows the error of the
/// lowest failing index so the reported failure does not depend on timing.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t k = std::max<std::size_t>(1, std::min(jobs, n));
  for (std::size_t w = 1; w < k; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::IoError, "not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

Config load_config(const std::string& path) { return path.empty() ? Config{} : Config::load(path); }

void announce(const Config& cfg, std::ostream& out, std::ostream& err) {
  out << "config_hash " << cfg.hash_hex() << '\n';
  err << "resolved config: " << cfg.to_json().dump() << '\n';
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::IoError, "cannot write " + path.string());
  os << text;
  if (!os) fail(ErrorCode::IoError, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string config, images, out;
  std::uint64_t seed = 0;
  std::size_t jobs = default_jobs();
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out, std::ostream& err) {
  const Config cfg = load_config(a.config);
  announce(cfg, out, err);
  const auto sources = list_pngs(a.images);
  if (sources.empty()) fail(ErrorCode::IoError, "image directory is empty: " + a.images);

  std::vector<std::string> names;
  for (const auto& p : sources) names.push_back(p.filename().string());
  std::array<std::vector<std::string>, kNumCategories> pools;
  pools.fill(names);
  Manifest manifest = mix_manifest(pools, cfg.data.mix_weights, cfg.data.total, a.seed);

  const fs::path root(a.out);
  for (std::size_t k = 0; k < kNumCategories; ++k) fs::create_directories(root / "data" / std::string(category_name(static_cast<Category>(k))));
  const auto synth = cfg.synthesis();
  parallel_for(manifest.records.size(), a.jobs, [&](std::size_t i) {
    const auto& r = manifest.records[i];
    const ImageBuf src = center_crop(read_png(fs::path(a.images) / r.source), cfg.data.image_size);
    const auto views = synthesize_record(r, src, synth);
    write_png(root / r.path_a, views.a);
    write_png(root / r.path_b, views.b);
    write_png(root / r.path_target, views.target);
  });
  write_manifest(root / "manifest.jsonl", manifest);
  write_text(root / "config.json", cfg.to_json().dump(2) + "\n");
  out << "records " << manifest.records.size() << " m3 " << manifest.counts[0] << " seg " << manifest.counts[1] << " control "
      << manifest.counts[2] << " fusion " << manifest.counts[3] << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, manifest, out, loss_csv, resume;
  std::optional<std::uint64_t> stop_at_step;
};

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  TrainerState state = [&] {
    if (a.resume.empty()) return TrainerState::create(load_config(a.config));
    TrainerState s = load_checkpoint(a.resume);
    if (!a.config.empty() && Config::load(a.config).hash() != s.config.hash()) {
      fail(ErrorCode::ConfigError, "--config differs from the configuration stored in the checkpoint");
    }
    return s;
  }();
  announce(state.config, out, err);

  if (!fs::exists(a.manifest)) fail(ErrorCode::IoError, "manifest not found: " + a.manifest);
  const Manifest manifest = read_manifest(a.manifest);
  if (manifest.records.empty()) fail(ErrorCode::EmptyManifest, "manifest has no records: " + a.manifest);
  const auto samples = load_samples(manifest, fs::path(a.manifest).parent_path(), state.model.codec());

  RunOptions opt;
  opt.loss_csv = a.loss_csv.empty() ? fs::path(a.out + ".loss.csv") : fs::path(a.loss_csv);
  opt.stop_at_step = a.stop_at_step;
  const auto start = state.step;
  const auto result = run_training(state, samples, opt);
  save_checkpoint(state, a.out);
  out << "steps " << start << ".." << state.step;
  if (!result.losses.empty()) out << " first_loss " << fmt(result.losses.front()) << " last_loss " << fmt(result.losses.back());
  out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct FuseArgs {
  std::string ckpt, image_a, image_b, prompt, templ, out;
  std::optional<std::size_t> steps;
  std::optional<double> guidance;
  std::uint64_t seed = 0;
};

int cmd_fuse(const FuseArgs& a, std::ostream& out, std::ostream& err) {
  std::string prompt = a.prompt;
  if (a.templ == "base") {
    prompt = apply_base_template(prompt);
  } else if (!a.templ.empty()) {
    fail(ErrorCode::ConfigError, "unknown template " + a.templ + " (expected: base)");
  }
  (void)parse_prompt(prompt);  // parse errors surface before the checkpoint is read

  const TrainerState state = load_checkpoint(a.ckpt);
  announce(state.config, out, err);
  const ImageBuf img_a = read_png(a.image_a);
  const ImageBuf img_b = read_png(a.image_b);
  const auto cond = make_conditioning(state.model.codec(), prompt, img_a, img_b);
  Rng rng(a.seed);
  const ImageBuf fused = sample_euler(state.model, cond, a.steps.value_or(state.config.sample.steps),
                                      a.guidance.value_or(state.config.sample.guidance), rng);
  write_png(a.out, fused);
  out << "wrote " << a.out << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string fused, src_a, src_b, out;
  std::size_t jobs = default_jobs();
};

int cmd_eval(const EvalArgs& a, std::ostream& out, std::ostream&) {
  const auto fused = list_pngs(a.fused);
  if (fused.empty()) fail(ErrorCode::IoError, "no fused images in " + a.fused);
  struct Row {
    std::string id;
    MsePsnr mp;
    double en, sd, sf, ag;
  };
  std::vector<Row> rows(fused.size());
  parallel_for(fused.size(), a.jobs, [&](std::size_t i) {
    const auto name = fused[i].filename();
    const ImageBuf f = read_png(fused[i]);
    const ImageBuf sa = read_png(fs::path(a.src_a) / name);
    const ImageBuf sb = read_png(fs::path(a.src_b) / name);
    const auto g = to_gray_image(f);
    rows[i] = {fused[i].stem().string(), mse_psnr(f, sa, sb), entropy(g), sd(g), spatial_frequency(g), average_gradient(g)};
  });

  std::ostringstream csv;
  csv << "id,mse,psnr,en,sd,sf,ag\n";
  double m[6] = {0, 0, 0, 0, 0, 0};
  for (const auto& r : rows) {
    csv << r.id << ',' << fmt(r.mp.mse) << ',' << fmt(r.mp.psnr) << ',' << fmt(r.en) << ',' << fmt(r.sd) << ',' << fmt(r.sf) << ','
        << fmt(r.ag) << '\n';
    const double v[6] = {r.mp.mse, r.mp.psnr, r.en, r.sd, r.sf, r.ag};
    for (int k = 0; k < 6; ++k) m[k] += v[k];
  }
  const double n = static_cast<double>(rows.size());
  csv << "MEAN";
  for (double v : m) csv << ',' << fmt(v / n);
  csv << '\n';
  write_text(a.out, csv.str());
  out << "evaluated " << rows.size() << " images\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct JudgeArgs {
  std::string pairs, backend = "stub", endpoint, out;
  std::size_t jobs = 4;
};

std::vector<JudgeItem> read_pairs(const fs::path& dir) {
  std::ifstream is(dir / "labels.csv");
  if (!is) fail(ErrorCode::IoError, "missing labels.csv in " + dir.string());
  std::vector<JudgeItem> items;
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      if (line == "id,label") continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail(ErrorCode::IoError, "malformed labels.csv line: " + line);
    JudgeItem item;
    item.id = line.substr(0, comma);
    item.label = line.substr(comma + 1);
    item.fused = read_png(dir / (item.id + "_fused.png"));
    item.segmented = read_png(dir / (item.id + "_seg.png"));
    if (fs::exists(dir / (item.id + "_gt.png"))) item.gt = read_mask_png(dir / (item.id + "_gt.png"));
    items.push_back(std::move(item));
  }
  return items;
}

int cmd_judge(const JudgeArgs& a, std::ostream& out, std::ostream&) {
  const auto items = read_pairs(a.pairs);
  if (items.empty()) fail(ErrorCode::EmptyVerdictList, "no samples listed in labels.csv");
  std::unique_ptr<JudgeBackend> backend;
  if (a.backend == "stub") {
    for (const auto& it : items)
      if (it.gt.data().empty()) fail(ErrorCode::IoError, "stub backend needs " + it.id + "_gt.png");
    backend = std::make_unique<StubBackend>();
  } else if (a.backend == "http") {
    if (a.endpoint.empty()) fail(ErrorCode::ConfigError, "--endpoint is required for the http backend");
    HttpJudgeOptions opt;
    opt.endpoint = a.endpoint;
    if (const char* tok = std::getenv("DITFUSE_JUDGE_TOKEN")) opt.bearer_token = tok;
    backend = std::make_unique<HttpBackend>(opt);
  } else {
    fail(ErrorCode::ConfigError, "unknown backend " + a.backend + " (expected stub or http)");
  }

  const auto verdicts = judge_all(*backend, items, a.jobs);
  const auto report = aggregate_ratios(verdicts);
  std::ostringstream csv;
  csv << "id,label,precision_ok,recall_ok,iou_ok\n";
  for (const auto& v : verdicts) csv << v.id << ',' << v.label << ',' << v.precision_ok << ',' << v.recall_ok << ',' << v.iou_ok << '\n';
  csv << "RATIO," << report.n << ',' << fmt(report.p_ratio) << ',' << fmt(report.r_ratio) << ',' << fmt(report.i_ratio) << '\n';
  write_text(a.out, csv.str());
  out << "P.Ratio " << fmt(report.p_ratio) << " R.Ratio " << fmt(report.r_ratio) << " I.Ratio " << fmt(report.i_ratio) << " n " << report.n << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct CorpusArgs {
  std::string out;
  std::size_t count = 16;
  std::size_t size = 48;
  std::uint64_t seed = 0;
};

int cmd_make_corpus(const CorpusArgs& a, std::ostream& out) {
  fs::create_directories(a.out);
  for (std::size_t i = 0; i < a.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%04zu.png", i);
    write_png(fs::path(a.out) / name, procedural_image(a.size, a.size, derive_seed(a.seed, i)));
  }
  out << "wrote " << a.count << " images to " << a.out << '\n';
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Instruction-driven DiT image fusion: data synthesis, training, inference and evaluation", "ditfuse"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "Synthesize a mixed training manifest and its images");
  c_gen->add_option("--config", gen.config, "Config JSON (defaults when omitted)");
  c_gen->add_option("--images", gen.images, "Directory of source PNGs")->required();
  c_gen->add_option("--out", gen.out, "Output directory")->required();
  c_gen->add_option("--seed", gen.seed, "Manifest seed");
  c_gen->add_option("--jobs", gen.jobs, "Worker threads");

  TrainArgs tr;
  std::uint64_t stop_at = 0;
  auto* c_train = app.add_subcommand("train", "Train the model on a manifest");
  c_train->add_option("--config", tr.config, "Config JSON (defaults when omitted)");
  c_train->add_option("--manifest", tr.manifest, "manifest.jsonl from gen-data")->required();
  c_train->add_option("--out", tr.out, "Checkpoint path")->required();
  c_train->add_option("--loss-csv", tr.loss_csv, "Loss log (default: <out>.loss.csv)");
  c_train->add_option("--resume", tr.resume, "Continue from this checkpoint");
  auto* o_stop = c_train->add_option("--stop-at-step", stop_at, "Stop once this many total steps are done");

  FuseArgs fu;
  std::size_t steps = 0;
  double guidance = 1.0;
  auto* c_fuse = app.add_subcommand("fuse", "Fuse two images under an instruction");
  c_fuse->add_option("--ckpt", fu.ckpt, "Checkpoint")->required();
  c_fuse->add_option("--image-a", fu.image_a, "First input PNG")->required();
  c_fuse->add_option("--image-b", fu.image_b, "Second input PNG")->required();
  c_fuse->add_option("--prompt", fu.prompt, "Prompt with both image placeholders")->required();
  c_fuse->add_option("--template", fu.templ, "'base' wraps a bare instruction in the canonical skeleton");
  auto* o_steps = c_fuse->add_option("--steps", steps, "Euler steps (config default when omitted)");
  auto* o_guid = c_fuse->add_option("--guidance", guidance, "Guidance scale (1 = off)");
  c_fuse->add_option("--seed", fu.seed, "Noise seed");
  c_fuse->add_option("--out", fu.out, "Output PNG")->required();

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Fusion metrics over a directory of fused images");
  c_eval->add_option("--fused", ev.fused, "Fused PNGs")->required();
  c_eval->add_option("--src-a", ev.src_a, "First sources, same filenames")->required();
  c_eval->add_option("--src-b", ev.src_b, "Second sources, same filenames")->required();
  c_eval->add_option("--out", ev.out, "CSV report")->required();
  c_eval->add_option("--jobs", ev.jobs, "Worker threads");

  JudgeArgs ju;
  auto* c_judge = app.add_subcommand("judge", "Binary-verdict segmentation judging");
  c_judge->add_option("--pairs", ju.pairs, "Directory with labels.csv and <id>_{fused,seg,gt}.png")->required();
  c_judge->add_option("--backend", ju.backend, "stub or http");
  c_judge->add_option("--endpoint", ju.endpoint, "HTTP judge URL");
  c_judge->add_option("--out", ju.out, "CSV report")->required();
  c_judge->add_option("--jobs", ju.jobs, "Requests in flight");

  CorpusArgs co;
  auto* c_corpus = app.add_subcommand("make-corpus", "Write procedural source images");
  c_corpus->add_option("--out", co.out, "Output directory")->required();
  c_corpus->add_option("--count", co.count, "Number of images");
  c_corpus->add_option("--size", co.size, "Side length in pixels");
  c_corpus->add_option("--seed", co.seed, "Seed");

  std::string vocab_out;
  auto* c_vocab = app.add_subcommand("vocab", "Write the special-token vocabulary file");
  c_vocab->add_option("--out", vocab_out, "Output path")->required();

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*c_gen) return cmd_gen_data(gen, out, err);
    if (*c_train) {
      if (*o_stop) tr.stop_at_step = stop_at;
      return cmd_train(tr, out, err);
    }
    if (*c_fuse) {
      if (*o_steps) fu.steps = steps;
      if (*o_guid) fu.guidance = guidance;
      return cmd_fuse(fu, out, err);
    }
    if (*c_eval) return cmd_eval(ev, out, err);
    if (*c_judge) return cmd_judge(ju, out, err);
    if (*c_corpus) return cmd_make_corpus(co, out);
    if (*c_vocab) {
      write_text(vocab_out, vocab_file_contents());
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitConfig;
}

}  // namespace ditfuse::cli
