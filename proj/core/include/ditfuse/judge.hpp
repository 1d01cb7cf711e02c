#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "ditfuse/imaging.hpp"

namespace ditfuse {

enum class JudgeQuestion { Precision, Recall, Iou };

std::string_view question_name(JudgeQuestion q);

struct Verdict {
  std::string id;
  std::string label;
  bool precision_ok = false;
  bool recall_ok = false;
  bool iou_ok = false;
  bool operator==(const Verdict&) const = default;
};

struct RatioReport {
  double p_ratio = 0;
  double r_ratio = 0;
  double i_ratio = 0;
  std::size_t n = 0;
  bool operator==(const RatioReport&) const = default;
};

struct StubAnswer {
  bool precision_ok = false;
  bool recall_ok = false;
  bool iou_ok = false;
  bool operator==(const StubAnswer&) const = default;
};

inline constexpr double kMaxErrorRatio = 0.20;
inline constexpr double kMinCoverage = 0.80;
inline constexpr double kMinIou = 0.80;

/// precision_ok ⇔ |pred∖gt|/|pred| ≤ 0.2 (false for empty pred);
/// recall_ok ⇔ |pred∩gt|/|gt| ≥ 0.8; iou_ok ⇔ IoU ≥ 0.8. Empty gt is an error.
StubAnswer stub_judge(const MaskBuf& gt, const MaskBuf& pred);

/// One segmentation sample as the judge sees it.
struct JudgeItem {
  std::string id;
  std::string label;
  ImageBuf fused;      // the image that was segmented
  ImageBuf segmented;  // fused with the predicted region overlaid
  MaskBuf gt;          // reference mask, used by the stub only
};

class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  virtual bool ask(const JudgeItem& item, JudgeQuestion q) = 0;
};

/// Deterministic oracle: recovers the predicted mask from the overlay and
/// applies stub_judge against the reference mask.
class StubBackend : public JudgeBackend {
 public:
  bool ask(const JudgeItem& item, JudgeQuestion q) override;
};

struct HttpJudgeOptions {
  std::string endpoint;  // http://host:port/path
  std::string bearer_token;
  std::chrono::milliseconds timeout{30000};
  int max_attempts = 3;
};

/// POSTs {fused_png_b64, seg_png_b64, label, question} and expects
/// {"answer": bool}. Retries transport failures and 5xx up to max_attempts.
class HttpBackend : public JudgeBackend {
 public:
  explicit HttpBackend(HttpJudgeOptions options);
  bool ask(const JudgeItem& item, JudgeQuestion q) override;

 private:
  HttpJudgeOptions opt_;
  std::string scheme_host_port_;
  std::string path_;
};

/// Asks precision, recall, iou in that order.
Verdict judge_sample(JudgeBackend& backend, const JudgeItem& item);

RatioReport aggregate_ratios(const std::vector<Verdict>& verdicts);

/// Judges every item with up to `max_in_flight` concurrent requests; the
/// result is sorted by id. The first backend error is rethrown after all
/// workers stop.
std::vector<Verdict> judge_all(JudgeBackend& backend, const std::vector<JudgeItem>& items, std::size_t max_in_flight = 4);

}  // namespace ditfuse
