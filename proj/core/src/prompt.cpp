#include "ditfuse/prompt.hpp"

#include <algorithm>

#include "ditfuse/error.hpp"

namespace ditfuse {

namespace {

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

// Both placeholders exactly once, in order, each wrapped as <img>…</img>, and
// no stray wrappers.
void validate_body(std::string_view body) {
  const auto n1 = count_occurrences(body, kImage1);
  const auto n2 = count_occurrences(body, kImage2);
  if (n1 == 0 || n2 == 0) fail(ErrorCode::MissingPlaceholder, "prompt must contain both <|image_1|> and <|image_2|>");
  if (n1 > 1 || n2 > 1) fail(ErrorCode::DuplicatePlaceholder, "each image placeholder may appear only once");

  const auto p1 = body.find(kImage1);
  const auto p2 = body.find(kImage2);
  if (p2 < p1) fail(ErrorCode::MalformedImageWrapper, "<|image_1|> must precede <|image_2|>");
  for (auto pos : {p1, p2}) {
    const bool open = pos >= kImageOpen.size() && body.substr(pos - kImageOpen.size(), kImageOpen.size()) == kImageOpen;
    const auto after = pos + kImage1.size();
    const bool close = body.substr(after, kImageClose.size()) == kImageClose;
    if (!open || !close) fail(ErrorCode::MalformedImageWrapper, "image placeholder must be wrapped as <img>…</img>");
  }
  if (count_occurrences(body, kImageOpen) != 2 || count_occurrences(body, kImageClose) != 2) {
    fail(ErrorCode::MalformedImageWrapper, "stray <img> or </img> wrapper");
  }
}

std::string_view trim_spaces(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

}  // namespace

std::string render_prompt(const PromptAST& ast) {
  if (!valid_tag_combination(ast.task, ast.subtask)) {
    fail(ErrorCode::InvalidTagCombination, "subtask does not belong to the task tag");
  }
  std::string out;
  if (ast.task) {
    out += tag_token(*ast.task);
    out += ' ';
  }
  if (ast.subtask) {
    out += tag_token(*ast.subtask);
    out += ' ';
  }
  std::string body;
  if (ast.inline_images) {
    body = ast.instruction;
  } else {
    body = std::string(kCanonicalImages);
    if (!ast.instruction.empty()) body += ' ' + ast.instruction;
  }
  validate_body(body);
  return out + body;
}

PromptAST parse_prompt(std::string_view text) {
  PromptAST ast;
  std::string_view rest = trim_spaces(text);

  if (!rest.empty() && rest.front() == '[') {
    const auto close = rest.find(']');
    if (close == std::string_view::npos) fail(ErrorCode::UnknownTag, "unterminated task tag");
    const auto token = rest.substr(0, close + 1);
    for (auto t : kAllTaskTags)
      if (tag_token(t) == token) ast.task = t;
    if (!ast.task) fail(ErrorCode::UnknownTag, "unrecognized task tag " + std::string(token));
    rest = trim_spaces(rest.substr(close + 1));
  }

  if (!rest.empty() && rest.front() == '<' && !rest.starts_with(kImageOpen) && !rest.starts_with("<|")) {
    const auto close = rest.find('>');
    if (close == std::string_view::npos) fail(ErrorCode::UnknownTag, "unterminated subtask tag");
    const auto token = rest.substr(0, close + 1);
    for (auto t : kAllSubTags)
      if (tag_token(t) == token) ast.subtask = t;
    if (!ast.subtask) fail(ErrorCode::UnknownTag, "unrecognized subtask tag " + std::string(token));
    rest = trim_spaces(rest.substr(close + 1));
  }

  if (!valid_tag_combination(ast.task, ast.subtask)) {
    fail(ErrorCode::InvalidTagCombination, "subtask does not belong to the task tag");
  }
  validate_body(rest);

  if (rest.starts_with(kCanonicalImages) && (rest.size() == kCanonicalImages.size() || rest[kCanonicalImages.size()] == ' ')) {
    ast.inline_images = false;
    ast.instruction = rest.size() == kCanonicalImages.size() ? std::string() : std::string(rest.substr(kCanonicalImages.size() + 1));
  } else {
    ast.inline_images = true;
    ast.instruction = std::string(rest);
  }
  return ast;
}

std::string apply_base_template(std::string_view instruction) {
  PromptAST ast;
  ast.instruction = std::string(instruction);
  return render_prompt(ast);
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = [] {
    std::vector<std::string> s;
    for (auto t : kAllTaskTags) s.emplace_back(tag_token(t));
    for (auto t : kAllSubTags) s.emplace_back(tag_token(t));
    s.emplace_back(kImageOpen);
    s.emplace_back(kImageClose);
    s.emplace_back(kImage1);
    s.emplace_back(kImage2);
    s.emplace_back("<|null|>");
    s.emplace_back("<|time|>");
    s.emplace_back("<|pad|>");
    return s;
  }();
  return specials;
}

std::string vocab_file_contents() {
  std::string out;
  for (const auto& s : special_tokens()) out += s + '\n';
  return out;
}

TokenSeq tokenize(std::string_view text) {
  // Longest-first candidate order so "<LIGHT++>" wins over "<LIGHT+>".
  static const std::vector<std::pair<std::string_view, int>> by_length = [] {
    std::vector<std::pair<std::string_view, int>> v;
    const auto& s = special_tokens();
    for (std::size_t i = 0; i < s.size(); ++i) v.emplace_back(s[i], tok::kByteVocab + static_cast<int>(i));
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
    return v;
  }();

  TokenSeq ids;
  std::size_t pos = 0;
  while (pos < text.size()) {
    bool matched = false;
    if (text[pos] == '[' || text[pos] == '<') {
      for (const auto& [tok, id] : by_length) {
        if (text.substr(pos, tok.size()) == tok) {
          ids.push_back(id);
          pos += tok.size();
          matched = true;
          break;
        }
      }
    }
    if (!matched) ids.push_back(static_cast<unsigned char>(text[pos++]));
  }
  return ids;
}

std::string detokenize(std::span<const int> ids) {
  std::string out;
  const auto& s = special_tokens();
  for (int id : ids) {
    if (id >= 0 && id < tok::kByteVocab) {
      out += static_cast<char>(id);
    } else if (id >= tok::kByteVocab && id < tok::kVocabSize) {
      out += s[static_cast<std::size_t>(id - tok::kByteVocab)];
    } else {
      fail(ErrorCode::BadParam, "token id " + std::to_string(id) + " outside vocabulary");
    }
  }
  return out;
}

bool is_text_condition_token(int id) {
  return (id >= 0 && id < tok::kByteVocab) || (id >= tok::kFusion && id < tok::kImgOpen);
}

// ---------------------------------------------------------------------------

const Segment& SequenceLayout::noisy() const {
  for (const auto& s : segments)
    if (s.kind == SegmentKind::NoisyImage) return s;
  fail(ErrorCode::ShapeMismatch, "layout has no noisy image segment");
}

const Segment& SequenceLayout::cond(int index) const {
  for (const auto& s : segments)
    if (s.kind == SegmentKind::CondImage && s.image_index == index) return s;
  fail(ErrorCode::ShapeMismatch, "layout has no condition image " + std::to_string(index));
}

std::size_t SequenceLayout::timestep_position() const {
  if (segments.empty() || segments.back().kind != SegmentKind::Timestep) {
    fail(ErrorCode::ShapeMismatch, "layout does not end with a timestep slot");
  }
  return segments.back().begin;
}

void SequenceLayout::validate() const {
  std::size_t cursor = 0;
  std::size_t noisy_count = 0;
  for (const auto& s : segments) {
    if (s.begin != cursor || s.end <= s.begin) fail(ErrorCode::ShapeMismatch, "layout segments are not contiguous");
    cursor = s.end;
    if (s.kind == SegmentKind::NoisyImage) ++noisy_count;
    if (s.kind == SegmentKind::Timestep && s.size() != 1) fail(ErrorCode::ShapeMismatch, "timestep slot must be one position");
  }
  if (cursor != tokens.size()) fail(ErrorCode::ShapeMismatch, "layout segments do not cover the sequence");
  if (noisy_count != 1) fail(ErrorCode::ShapeMismatch, "layout needs exactly one noisy image segment");
  (void)timestep_position();
}

SequenceLayout assemble_sequence(std::span<const int> tokens, std::array<std::size_t, 2> cond_lengths,
                                 std::size_t noisy_length) {
  const auto n1 = std::count(tokens.begin(), tokens.end(), tok::kImage1);
  const auto n2 = std::count(tokens.begin(), tokens.end(), tok::kImage2);
  if (n1 == 0 || n2 == 0) fail(ErrorCode::MissingPlaceholder, "token sequence lacks an image placeholder");
  if (n1 > 1 || n2 > 1) fail(ErrorCode::DuplicatePlaceholder, "image placeholder appears more than once");

  SequenceLayout layout;
  auto push_image = [&](SegmentKind kind, int index, std::size_t length) {
    const std::size_t begin = layout.tokens.size();
    layout.tokens.insert(layout.tokens.end(), length, -1);
    layout.segments.push_back({kind, begin, begin + length, index});
  };
  auto push_text = [&](int id) {
    const std::size_t p = layout.tokens.size();
    layout.tokens.push_back(id);
    if (!layout.segments.empty() && layout.segments.back().kind == SegmentKind::Text) {
      layout.segments.back().end = p + 1;
    } else {
      layout.segments.push_back({SegmentKind::Text, p, p + 1, -1});
    }
  };

  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int id = tokens[i];
    if (id == tok::kImage1 || id == tok::kImage2) {
      const int index = id == tok::kImage1 ? 0 : 1;
      const bool wrapped = i > 0 && tokens[i - 1] == tok::kImgOpen && i + 1 < tokens.size() && tokens[i + 1] == tok::kImgClose;
      if (!wrapped) push_text(tok::kImgOpen);
      push_image(SegmentKind::CondImage, index, cond_lengths[static_cast<std::size_t>(index)]);
      if (!wrapped) push_text(tok::kImgClose);
    } else {
      push_text(id);
    }
  }
  push_text(tok::kImgOpen);
  push_image(SegmentKind::NoisyImage, -1, noisy_length);
  push_text(tok::kImgClose);
  push_image(SegmentKind::Timestep, -1, 1);
  layout.validate();
  return layout;
}

AttnMask build_attention_mask(const SequenceLayout& layout) {
  const std::size_t n = layout.length();
  // Image-span id per position; -1 for text and the timestep slot.
  std::vector<int> span_id(n, -1);
  for (std::size_t k = 0; k < layout.segments.size(); ++k) {
    const auto& s = layout.segments[k];
    if (s.end > n) fail(ErrorCode::ShapeMismatch, "segment exceeds layout length");
    if (s.is_image())
      for (std::size_t p = s.begin; p < s.end; ++p) span_id[p] = static_cast<int>(k);
  }
  AttnMask mask(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) mask.set(i, j, true);
    if (span_id[i] < 0) continue;
    const auto& s = layout.segments[static_cast<std::size_t>(span_id[i])];
    for (std::size_t j = i + 1; j < s.end; ++j) mask.set(i, j, true);
  }
  return mask;
}

}  // namespace ditfuse
