#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ditfuse/imaging.hpp"
#include "ditfuse/rng.hpp"
#include "ditfuse/tags.hpp"

namespace ditfuse {

/// Ranges for per-cell degradation parameters and which kinds may be drawn.
struct DegradeConfig {
  double blur_sigma_lo = 1.0;
  double blur_sigma_hi = 3.0;
  double noise_sigma_lo = 0.05;
  double noise_sigma_hi = 0.20;
  std::vector<DegradeKind> kinds = {DegradeKind::Blur, DegradeKind::GaussNoise, DegradeKind::NoiseMask};
};

DegradeSpec sample_degrade_spec(const DegradeConfig& cfg, Rng& rng);

enum class CellAssign : std::uint8_t { DegradeA, DegradeB, DegradeBoth };

struct CellOps {
  std::optional<DegradeSpec> a;
  std::optional<DegradeSpec> b;
  bool operator==(const CellOps&) const = default;
};

/// Per-cell degradation assignment over a grid of grid_px × grid_px cells.
struct DegradationPlan {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t grid_px = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<CellAssign> cells;  // row-major, rows × cols
  std::vector<CellOps> ops;       // parallel to cells

  std::size_t total() const { return cells.size(); }
  std::size_t count(CellAssign kind) const;
  Rect cell_rect(std::size_t index) const;

  bool operator==(const DegradationPlan&) const = default;
};

DegradationPlan plan_degradation(std::size_t height, std::size_t width, std::size_t grid_px, double joint_fraction,
                                 Rng& rng, const DegradeConfig& cfg = {});

struct ViewPair {
  ImageBuf a;
  ImageBuf b;
  ImageBuf target;
};

/// Complementary two-view synthesis. Every degradation reads the clean
/// source, so cells never contaminate each other.
ViewPair synthesize_m3_pair(const ImageBuf& img, const DegradationPlan& plan, Rng& rng);

enum class TargetKind { M3, IVIF, MEF, MFF, Control, Seg };

struct TargetInputs {
  const ImageBuf* source = nullptr;           // M3
  const ImageBuf* ir = nullptr;               // IVIF
  const ImageBuf* vis = nullptr;              // IVIF
  const ImageBuf* normal_exposure = nullptr;  // MEF
  const ImageBuf* pseudo_gt = nullptr;        // MFF
  const ImageBuf* base_target = nullptr;      // Control, Seg
  const MaskBuf* label_mask = nullptr;        // Seg
  std::optional<SubTag> control;              // Control
};

ImageBuf build_target(TargetKind kind, const TargetInputs& in);

// ---------------------------------------------------------------------------
// Manifest

enum class Category : std::uint8_t { M3 = 0, Seg = 1, Control = 2, Fusion = 3 };
inline constexpr std::size_t kNumCategories = 4;

std::string_view category_name(Category c);
Category category_of(std::optional<TaskTag> task, std::optional<SubTag> sub);

struct SampleRecord {
  std::string id;
  std::optional<TaskTag> task_tag;
  std::optional<SubTag> subtask_tag;
  std::string prompt;
  std::string path_a;
  std::string path_b;
  std::string path_target;
  std::uint64_t seed = 0;

  // Working fields carried in memory only; not serialized.
  std::string source;
  std::string label;

  Category category() const { return category_of(task_tag, subtask_tag); }
};

struct Manifest {
  std::vector<SampleRecord> records;
  std::array<std::size_t, kNumCategories> counts{};
};

/// Largest-remainder apportionment of `total` by `weights`.
std::array<std::size_t, kNumCategories> apportion(const std::array<double, kNumCategories>& weights, std::size_t total);

/// Exact-count category mixture over per-category source pools, shuffled by
/// seed. Each record gets its id, tags, prompt, paths and derived seed.
Manifest mix_manifest(const std::array<std::vector<std::string>, kNumCategories>& pools,
                      const std::array<double, kNumCategories>& weights, std::size_t total, std::uint64_t seed);

std::string record_to_json(const SampleRecord& r);
SampleRecord record_from_json(const std::string& line);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Segmentation label vocabulary used for desk-scale seg samples.
const std::vector<std::string>& seg_labels();
MaskBuf label_mask(const ImageBuf& img, const std::string& label);

struct SynthesisConfig {
  std::vector<std::size_t> grid_sizes = {16, 32, 64};
  double joint_fraction = 0.25;
  DegradeConfig degrade;
};

/// Builds (a, b, target) for one record from its source image. Pure in
/// (record.seed, source, cfg).
ViewPair synthesize_record(const SampleRecord& record, const ImageBuf& source, const SynthesisConfig& cfg);

}  // namespace ditfuse

namespace ditfuse {

/// Deterministic synthetic "natural" image: a two-colour gradient with
/// random discs, rectangles and a sinusoidal texture. Stand-in corpus for
/// environments without a photo collection.
ImageBuf procedural_image(std::size_t height, std::size_t width, std::uint64_t seed);

/// Centre crop to size×size (the image must be at least that large).
ImageBuf center_crop(const ImageBuf& img, std::size_t size);

}  // namespace ditfuse
