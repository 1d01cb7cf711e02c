#include "ditfuse/m3.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ditfuse/error.hpp"
#include "ditfuse/prompt.hpp"

namespace ditfuse {

DegradeSpec sample_degrade_spec(const DegradeConfig& cfg, Rng& rng) {
  if (cfg.kinds.empty()) fail(ErrorCode::BadParam, "no degradation kinds enabled");
  DegradeSpec spec;
  spec.kind = cfg.kinds[rng.index(cfg.kinds.size())];
  switch (spec.kind) {
    case DegradeKind::Blur: spec.sigma = rng.uniform(cfg.blur_sigma_lo, cfg.blur_sigma_hi); break;
    case DegradeKind::GaussNoise: spec.sigma = rng.uniform(cfg.noise_sigma_lo, cfg.noise_sigma_hi); break;
    case DegradeKind::NoiseMask: spec.sigma = 0.0; break;
  }
  return spec;
}

std::size_t DegradationPlan::count(CellAssign kind) const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), kind));
}

Rect DegradationPlan::cell_rect(std::size_t index) const {
  const std::size_t r = index / cols, c = index % cols;
  return {r * grid_px, c * grid_px, (r + 1) * grid_px, (c + 1) * grid_px};
}

DegradationPlan plan_degradation(std::size_t height, std::size_t width, std::size_t grid_px, double joint_fraction,
                                 Rng& rng, const DegradeConfig& cfg) {
  if (grid_px == 0 || height % grid_px != 0 || width % grid_px != 0 || height == 0 || width == 0) {
    fail(ErrorCode::IndivisibleGrid, std::to_string(height) + "x" + std::to_string(width) + " not divisible by grid " +
                                         std::to_string(grid_px));
  }
  if (!(joint_fraction >= 0.0 && joint_fraction <= 1.0)) fail(ErrorCode::BadParam, "joint_fraction must be in [0,1]");

  DegradationPlan plan;
  plan.height = height;
  plan.width = width;
  plan.grid_px = grid_px;
  plan.rows = height / grid_px;
  plan.cols = width / grid_px;
  const std::size_t total = plan.rows * plan.cols;
  const auto n_both = static_cast<std::size_t>(std::llround(static_cast<double>(total) * joint_fraction));

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order.begin(), order.end());

  const std::size_t rest = total - n_both;
  std::size_t n_a = rest / 2;
  if (rest % 2 == 1 && rng.bernoulli(0.5)) ++n_a;

  plan.cells.assign(total, CellAssign::DegradeB);
  for (std::size_t i = 0; i < n_both; ++i) plan.cells[order[i]] = CellAssign::DegradeBoth;
  for (std::size_t i = 0; i < n_a; ++i) plan.cells[order[n_both + i]] = CellAssign::DegradeA;

  plan.ops.resize(total);
  for (std::size_t i = 0; i < total; ++i) {
    const auto assign = plan.cells[i];
    if (assign != CellAssign::DegradeB) plan.ops[i].a = sample_degrade_spec(cfg, rng);
    if (assign != CellAssign::DegradeA) plan.ops[i].b = sample_degrade_spec(cfg, rng);
  }
  return plan;
}

ViewPair synthesize_m3_pair(const ImageBuf& img, const DegradationPlan& plan, Rng& rng) {
  if (img.height() != plan.height || img.width() != plan.width) {
    fail(ErrorCode::ShapeMismatch, "image dims do not match degradation plan");
  }
  ViewPair out{img, img, img};
  for (std::size_t i = 0; i < plan.total(); ++i) {
    const Rect r = plan.cell_rect(i);
    if (plan.ops[i].a) degrade_rect(img, out.a, r, *plan.ops[i].a, rng);
    if (plan.ops[i].b) degrade_rect(img, out.b, r, *plan.ops[i].b, rng);
  }
  return out;
}

ImageBuf build_target(TargetKind kind, const TargetInputs& in) {
  auto need = [](const auto* p, const char* what) -> const auto& {
    if (!p) fail(ErrorCode::MissingInput, std::string("target needs ") + what);
    return *p;
  };
  switch (kind) {
    case TargetKind::M3: return need(in.source, "source image");
    case TargetKind::IVIF: return mean_fuse(need(in.ir, "infrared image"), need(in.vis, "visible image"));
    case TargetKind::MEF: return need(in.normal_exposure, "normal-exposure image");
    case TargetKind::MFF: return need(in.pseudo_gt, "pseudo ground truth");
    case TargetKind::Control:
      if (!in.control) fail(ErrorCode::MissingInput, "control target needs a subtag");
      return adjust_photometric(need(in.base_target, "base target"), *in.control);
    case TargetKind::Seg: return overlay_mask(need(in.base_target, "base target"), need(in.label_mask, "label mask"));
  }
  fail(ErrorCode::BadParam, "unknown target kind");
}

// ---------------------------------------------------------------------------

std::string_view category_name(Category c) {
  switch (c) {
    case Category::M3: return "m3";
    case Category::Seg: return "seg";
    case Category::Control: return "control";
    case Category::Fusion: return "fusion";
  }
  return "";
}

Category category_of(std::optional<TaskTag> task, std::optional<SubTag> sub) {
  if (task == TaskTag::Seg) return Category::Seg;
  if (task == TaskTag::Control) return Category::Control;
  if (task == TaskTag::Fusion && sub) return Category::Fusion;
  return Category::M3;
}

std::array<std::size_t, kNumCategories> apportion(const std::array<double, kNumCategories>& weights, std::size_t total) {
  double wsum = 0;
  for (double w : weights) {
    if (!(w >= 0.0)) fail(ErrorCode::ConfigError, "mixture weights must be non-negative");
    wsum += w;
  }
  if (std::fabs(wsum - 1.0) > 1e-6) fail(ErrorCode::ConfigError, "mixture weights must sum to 1");

  std::array<std::size_t, kNumCategories> counts{};
  std::array<double, kNumCategories> frac{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < kNumCategories; ++k) {
    const double exact = weights[k] * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    frac[k] = exact - std::floor(exact);
    assigned += counts[k];
  }
  std::array<std::size_t, kNumCategories> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return frac[a] > frac[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % kNumCategories]];
  return counts;
}

namespace {

const char* m3_instructions[] = {
    "Reconstruct the clean image from both views.",
    "Fuse the two degraded views into one clean image.",
    "Combine the complementary details of both images.",
};

std::string fusion_instruction(SubTag sub) {
  switch (sub) {
    case SubTag::MultiModalities: return "Fuse the infrared and visible images.";
    case SubTag::MultiExposure: return "Fuse the under- and over-exposed images.";
    case SubTag::MultiFocus: return "Fuse the images into an all-in-focus result.";
    default: return "Fuse the images.";
  }
}

std::string control_instruction(SubTag sub) {
  switch (sub) {
    case SubTag::LightPlusPlus: return "Fuse the images and greatly increase the brightness.";
    case SubTag::LightPlus: return "Fuse the images and increase the brightness.";
    case SubTag::LightMinus: return "Fuse the images and decrease the brightness.";
    case SubTag::LightMinusMinus: return "Fuse the images and greatly decrease the brightness.";
    case SubTag::ContrastPlus: return "Fuse the images and increase the contrast.";
    case SubTag::ContrastMinus: return "Fuse the images and decrease the contrast.";
    default: return "Fuse the images.";
  }
}

std::string pad_id(std::size_t index, std::size_t total) {
  std::size_t width = 6;
  for (std::size_t t = total; t >= 1000000; t /= 10) ++width;
  std::string s = std::to_string(index);
  return std::string(width > s.size() ? width - s.size() : 0, '0') + s;
}

// Fills tags, label and prompt from the record seed.
void compose_prompt(SampleRecord& r, Category cat) {
  Rng rng = Rng(r.seed).split(1);
  PromptAST ast;
  switch (cat) {
    case Category::M3:
      ast.task = TaskTag::Fusion;
      ast.instruction = m3_instructions[rng.index(std::size(m3_instructions))];
      break;
    case Category::Fusion:
      ast.task = TaskTag::Fusion;
      ast.subtask = kFusionSubTags[rng.index(kFusionSubTags.size())];
      ast.instruction = fusion_instruction(*ast.subtask);
      break;
    case Category::Control:
      ast.task = TaskTag::Control;
      ast.subtask = kControlSubTags[rng.index(kControlSubTags.size())];
      ast.instruction = control_instruction(*ast.subtask);
      break;
    case Category::Seg:
      ast.task = TaskTag::Seg;
      r.label = seg_labels()[rng.index(seg_labels().size())];
      ast.instruction = "Segment the " + r.label + ".";
      break;
  }
  r.task_tag = ast.task;
  r.subtask_tag = ast.subtask;
  r.prompt = render_prompt(ast);
}

}  // namespace

Manifest mix_manifest(const std::array<std::vector<std::string>, kNumCategories>& pools,
                      const std::array<double, kNumCategories>& weights, std::size_t total, std::uint64_t seed) {
  Manifest m;
  m.counts = apportion(weights, total);
  Rng root(seed);

  struct Slot {
    Category cat;
    std::string source;
  };
  std::vector<Slot> slots;
  slots.reserve(total);
  for (std::size_t k = 0; k < kNumCategories; ++k) {
    if (m.counts[k] == 0) continue;
    const auto& pool = pools[k];
    if (pool.empty()) fail(ErrorCode::EmptyPool, std::string(category_name(static_cast<Category>(k))) + " pool is empty");
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    Rng pick = root.split(k);
    pick.shuffle(order.begin(), order.end());
    for (std::size_t i = 0; i < m.counts[k]; ++i) slots.push_back({static_cast<Category>(k), pool[order[i % order.size()]]});
  }
  Rng mixer = root.split(100);
  mixer.shuffle(slots.begin(), slots.end());

  m.records.reserve(slots.size());
  for (std::size_t i = 0; i < slots.size(); ++i) {
    SampleRecord r;
    r.id = pad_id(i, total);
    r.seed = derive_seed(seed, i);
    r.source = slots[i].source;
    compose_prompt(r, slots[i].cat);
    const std::string dir = "data/" + std::string(category_name(slots[i].cat)) + "/";
    r.path_a = dir + r.id + "_a.png";
    r.path_b = dir + r.id + "_b.png";
    r.path_target = dir + r.id + "_target.png";
    m.records.push_back(std::move(r));
  }
  return m;
}

std::string record_to_json(const SampleRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["task_tag"] = r.task_tag ? nlohmann::ordered_json(std::string(tag_name(*r.task_tag))) : nlohmann::ordered_json(nullptr);
  j["subtask_tag"] =
      r.subtask_tag ? nlohmann::ordered_json(std::string(tag_name(*r.subtask_tag))) : nlohmann::ordered_json(nullptr);
  j["prompt"] = r.prompt;
  j["path_a"] = r.path_a;
  j["path_b"] = r.path_b;
  j["path_target"] = r.path_target;
  j["seed"] = r.seed;
  return j.dump();
}

SampleRecord record_from_json(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoError, std::string("bad manifest line: ") + e.what());
  }
  static const std::vector<std::string> fields = {"id", "task_tag", "subtask_tag", "prompt", "path_a", "path_b", "path_target", "seed"};
  if (!j.is_object() || j.size() != fields.size()) fail(ErrorCode::IoError, "manifest record must have exactly 8 fields");
  for (const auto& f : fields)
    if (!j.contains(f)) fail(ErrorCode::IoError, "manifest record lacks field " + f);

  SampleRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    if (!j.at("task_tag").is_null()) {
      r.task_tag = task_from_name(j.at("task_tag").get<std::string>());
      if (!r.task_tag) fail(ErrorCode::IoError, "unknown task_tag in manifest");
    }
    if (!j.at("subtask_tag").is_null()) {
      r.subtask_tag = subtag_from_name(j.at("subtask_tag").get<std::string>());
      if (!r.subtask_tag) fail(ErrorCode::IoError, "unknown subtask_tag in manifest");
    }
    r.prompt = j.at("prompt").get<std::string>();
    r.path_a = j.at("path_a").get<std::string>();
    r.path_b = j.at("path_b").get<std::string>();
    r.path_target = j.at("path_target").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoError, std::string("bad manifest field: ") + e.what());
  }
  return r;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::IoError, "cannot open " + path.string());
  for (const auto& r : manifest.records) os << record_to_json(r) << '\n';
  if (!os) fail(ErrorCode::IoError, "write failed for " + path.string());
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::IoError, "cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    m.records.push_back(record_from_json(line));
    ++m.counts[static_cast<std::size_t>(m.records.back().category())];
  }
  return m;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& seg_labels() {
  static const std::vector<std::string> labels = {"bright region", "dark region"};
  return labels;
}

MaskBuf label_mask(const ImageBuf& img, const std::string& label) {
  const auto gray = to_gray(img);
  const double mean = std::accumulate(gray.begin(), gray.end(), 0.0) / static_cast<double>(gray.size());
  const bool bright = label == "bright region";
  if (!bright && label != "dark region") fail(ErrorCode::BadParam, "unknown segmentation label " + label);
  MaskBuf mask(img.height(), img.width());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x) {
      const double g = gray[y * img.width() + x];
      mask.set(y, x, bright ? g > mean : g < mean);
    }
  return mask;
}

namespace {

ImageBuf scaled(const ImageBuf& img, float gain) {
  ImageBuf out = img;
  for (auto& v : out.data()) v = std::clamp(v * gain, 0.0f, 1.0f);
  return out;
}

ViewPair m3_views(const ImageBuf& source, const SynthesisConfig& cfg, Rng& rng) {
  std::vector<std::size_t> grids;
  for (auto g : cfg.grid_sizes)
    if (g > 0 && source.height() % g == 0 && source.width() % g == 0) grids.push_back(g);
  if (grids.empty()) {
    fail(ErrorCode::IndivisibleGrid, "no configured grid size divides " + std::to_string(source.height()) + "x" +
                                         std::to_string(source.width()));
  }
  const std::size_t grid = grids[rng.index(grids.size())];
  const auto plan = plan_degradation(source.height(), source.width(), grid, cfg.joint_fraction, rng, cfg.degrade);
  return synthesize_m3_pair(source, plan, rng);
}

}  // namespace

ViewPair synthesize_record(const SampleRecord& record, const ImageBuf& source, const SynthesisConfig& cfg) {
  Rng rng = Rng(record.seed).split(2);
  switch (record.category()) {
    case Category::M3: return m3_views(source, cfg, rng);
    case Category::Fusion: {
      TargetInputs in;
      ViewPair out;
      switch (*record.subtask_tag) {
        case SubTag::MultiModalities: {
          // Desk-scale stand-in: luminance as the "infrared" view, a dimmed colour view as "visible".
          const auto gray = to_gray(source);
          std::vector<float> ir(gray.size() * 3);
          for (std::size_t i = 0; i < gray.size(); ++i) ir[i * 3] = ir[i * 3 + 1] = ir[i * 3 + 2] = gray[i];
          out.a = ImageBuf(source.height(), source.width(), std::move(ir));
          out.b = scaled(source, 0.5f);
          in.ir = &out.a;
          in.vis = &out.b;
          out.target = build_target(TargetKind::IVIF, in);
          return out;
        }
        case SubTag::MultiExposure:
          out.a = scaled(source, 0.5f);
          out.b = scaled(source, 2.0f);
          in.normal_exposure = &source;
          out.target = build_target(TargetKind::MEF, in);
          return out;
        case SubTag::MultiFocus: {
          const DegradeSpec blur{DegradeKind::Blur, rng.uniform(cfg.degrade.blur_sigma_lo, cfg.degrade.blur_sigma_hi)};
          const std::size_t half = source.width() / 2;
          out.a = source;
          out.b = source;
          degrade_rect(source, out.a, {0, 0, source.height(), half}, blur, rng);
          degrade_rect(source, out.b, {0, half, source.height(), source.width()}, blur, rng);
          in.pseudo_gt = &source;
          out.target = build_target(TargetKind::MFF, in);
          return out;
        }
        default: fail(ErrorCode::BadParam, "fusion record with non-fusion subtag");
      }
    }
    case Category::Control: {
      auto views = m3_views(source, cfg, rng);
      TargetInputs in;
      in.base_target = &source;
      in.control = record.subtask_tag;
      views.target = build_target(TargetKind::Control, in);
      return views;
    }
    case Category::Seg: {
      auto views = m3_views(source, cfg, rng);
      std::string label = record.label;
      if (label.empty()) {
        // Recover the label from the instruction when the record came from disk.
        for (const auto& l : seg_labels())
          if (record.prompt.find(l) != std::string::npos) label = l;
      }
      const auto mask = label_mask(source, label);
      TargetInputs in;
      in.base_target = &source;
      in.label_mask = &mask;
      views.target = build_target(TargetKind::Seg, in);
      return views;
    }
  }
  fail(ErrorCode::BadParam, "unknown record category");
}

}  // namespace ditfuse

namespace ditfuse {

ImageBuf procedural_image(std::size_t height, std::size_t width, std::uint64_t seed) {
  if (height == 0 || width == 0) fail(ErrorCode::BadParam, "image dims must be positive");
  Rng rng(seed);
  auto colour = [&] { return std::array<double, 3>{rng.uniform(), rng.uniform(), rng.uniform()}; };
  const auto c0 = colour(), c1 = colour();
  const double angle = rng.uniform(0.0, 6.283185307179586);
  const double dx = std::cos(angle), dy = std::sin(angle);
  const double h = static_cast<double>(height), w = static_cast<double>(width);

  std::vector<float> data(height * width * 3);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double s = 0.5 + 0.5 * ((static_cast<double>(x) / w - 0.5) * dx + (static_cast<double>(y) / h - 0.5) * dy) * 1.4;
      for (std::size_t c = 0; c < 3; ++c) data[(y * width + x) * 3 + c] = static_cast<float>(c0[c] * (1 - s) + c1[c] * s);
    }

  const std::size_t n_shapes = 2 + rng.index(4);
  for (std::size_t k = 0; k < n_shapes; ++k) {
    const auto col = colour();
    const bool disc = rng.bernoulli(0.5);
    const double cy = rng.uniform(0, h), cx = rng.uniform(0, w);
    const double ry = rng.uniform(0.1, 0.35) * h, rx = rng.uniform(0.1, 0.35) * w;
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double u = (static_cast<double>(y) - cy) / ry, v = (static_cast<double>(x) - cx) / rx;
        const bool inside = disc ? u * u + v * v <= 1.0 : std::fabs(u) <= 1.0 && std::fabs(v) <= 1.0;
        if (!inside) continue;
        for (std::size_t c = 0; c < 3; ++c) data[(y * width + x) * 3 + c] = static_cast<float>(col[c]);
      }
  }

  const double fy = rng.uniform(0.2, 1.2), fx = rng.uniform(0.2, 1.2), amp = rng.uniform(0.02, 0.08);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double t = amp * std::sin(fy * static_cast<double>(y)) * std::cos(fx * static_cast<double>(x));
      for (std::size_t c = 0; c < 3; ++c) data[(y * width + x) * 3 + c] += static_cast<float>(t);
    }
  return ImageBuf(height, width, std::move(data));
}

ImageBuf center_crop(const ImageBuf& img, std::size_t size) {
  if (img.height() < size || img.width() < size || size == 0) {
    fail(ErrorCode::BadParam, "cannot crop " + std::to_string(img.height()) + "x" + std::to_string(img.width()) + " to " + std::to_string(size));
  }
  const std::size_t y0 = (img.height() - size) / 2, x0 = (img.width() - size) / 2;
  ImageBuf out(size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
  return out;
}

}  // namespace ditfuse
