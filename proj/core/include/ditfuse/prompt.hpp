#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ditfuse/tags.hpp"

namespace ditfuse {

// ---------------------------------------------------------------------------
// Prompt grammar
//
//   prompt    := [TAG " "] [SUBTAG " "] body
//   canonical := "<img><|image_1|></img> <img><|image_2|></img>" [" " instruction]
//   body      := canonical | instruction-with-both-wrapped-placeholders

inline constexpr std::string_view kImageOpen = "<img>";
inline constexpr std::string_view kImageClose = "</img>";
inline constexpr std::string_view kImage1 = "<|image_1|>";
inline constexpr std::string_view kImage2 = "<|image_2|>";
inline constexpr std::string_view kCanonicalImages = "<img><|image_1|></img> <img><|image_2|></img>";

struct PromptAST {
  std::optional<TaskTag> task;
  std::optional<SubTag> subtask;
  /// Free text. When `inline_images` is set it carries both wrapped
  /// placeholders itself; otherwise they precede it in canonical position.
  std::string instruction;
  bool inline_images = false;

  bool operator==(const PromptAST&) const = default;
};

std::string render_prompt(const PromptAST& ast);
PromptAST parse_prompt(std::string_view text);

/// Wraps a bare instruction in the canonical tag-free skeleton.
std::string apply_base_template(std::string_view instruction);

// ---------------------------------------------------------------------------
// Byte-level tokenizer with atomic special tokens.

using TokenSeq = std::vector<int>;

namespace tok {
inline constexpr int kByteVocab = 256;
// Special ids, in vocabulary-file order.
inline constexpr int kFusion = 256;
inline constexpr int kControl = 257;
inline constexpr int kSeg = 258;
inline constexpr int kFirstSubtag = 259;  // 9 subtags follow in tags.hpp order
inline constexpr int kImgOpen = 268;
inline constexpr int kImgClose = 269;
inline constexpr int kImage1 = 270;
inline constexpr int kImage2 = 271;
inline constexpr int kNull = 272;
inline constexpr int kTime = 273;
inline constexpr int kPad = 274;
inline constexpr int kVocabSize = 275;
}  // namespace tok

inline constexpr std::uint32_t kVocabVersion = 1;

/// Special tokens in id order (id = 256 + index).
const std::vector<std::string>& special_tokens();
/// Vocabulary file body: one special token per line, line index = id - 256.
std::string vocab_file_contents();

TokenSeq tokenize(std::string_view text);
std::string detokenize(std::span<const int> ids);

/// Text-condition tokens are everything a NULL condition replaces: bytes,
/// task/subtask tags. Image wrappers, placeholders and reserved slots are not.
bool is_text_condition_token(int id);

// ---------------------------------------------------------------------------
// Sequence layout and hybrid attention mask

enum class SegmentKind : std::uint8_t { Text, CondImage, NoisyImage, Timestep };

struct Segment {
  SegmentKind kind = SegmentKind::Text;
  std::size_t begin = 0;
  std::size_t end = 0;   // exclusive
  int image_index = -1;  // 0 or 1 for CondImage

  std::size_t size() const { return end - begin; }
  bool is_image() const { return kind == SegmentKind::CondImage || kind == SegmentKind::NoisyImage; }
  bool operator==(const Segment&) const = default;
};

struct SequenceLayout {
  std::vector<Segment> segments;
  /// Token id per position; -1 where the position holds image or timestep content.
  std::vector<int> tokens;

  std::size_t length() const { return tokens.size(); }
  const Segment& noisy() const;
  const Segment& cond(int index) const;
  std::size_t timestep_position() const;

  /// Checks contiguity/cover, a single NoisyImage and a final Timestep.
  void validate() const;
};

/// Replaces each placeholder with its image span (adding <img>/</img> if the
/// placeholder is bare), appends the wrapped noisy image and the timestep slot.
SequenceLayout assemble_sequence(std::span<const int> tokens, std::array<std::size_t, 2> cond_lengths,
                                 std::size_t noisy_length);

class AttnMask {
 public:
  AttnMask() = default;
  explicit AttnMask(std::size_t n) : n_(n), bits_(n * n, 0) {}

  std::size_t size() const { return n_; }
  bool visible(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { bits_[i * n_ + j] = v ? 1 : 0; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  bool operator==(const AttnMask&) const = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// visible(i,j) = (j <= i) or (i and j lie in the same image span).
AttnMask build_attention_mask(const SequenceLayout& layout);

}  // namespace ditfuse
