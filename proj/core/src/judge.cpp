#include "ditfuse/judge.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "ditfuse/error.hpp"

namespace ditfuse {

std::string_view question_name(JudgeQuestion q) {
  switch (q) {
    case JudgeQuestion::Precision: return "precision";
    case JudgeQuestion::Recall: return "recall";
    case JudgeQuestion::Iou: return "iou";
  }
  return "";
}

StubAnswer stub_judge(const MaskBuf& gt, const MaskBuf& pred) {
  if (gt.height() != pred.height() || gt.width() != pred.width()) fail(ErrorCode::ShapeMismatch, "masks differ in size");
  std::size_t n_gt = 0, n_pred = 0, inter = 0;
  for (std::size_t i = 0; i < gt.data().size(); ++i) {
    const bool g = gt.data()[i] != 0, p = pred.data()[i] != 0;
    n_gt += g;
    n_pred += p;
    inter += g && p;
  }
  if (n_gt == 0) fail(ErrorCode::DegenerateGT, "reference mask is empty");
  const std::size_t spurious = n_pred - inter;
  const std::size_t uni = n_gt + n_pred - inter;
  StubAnswer a;
  // Integer cross-multiplication keeps the 20%/80% boundaries exact.
  a.precision_ok = n_pred > 0 && spurious * 5 <= n_pred;
  a.recall_ok = inter * 5 >= n_gt * 4;
  a.iou_ok = inter * 5 >= uni * 4;
  return a;
}

bool StubBackend::ask(const JudgeItem& item, JudgeQuestion q) {
  const MaskBuf pred = recover_mask(item.segmented, item.fused);
  const StubAnswer a = stub_judge(item.gt, pred);
  switch (q) {
    case JudgeQuestion::Precision: return a.precision_ok;
    case JudgeQuestion::Recall: return a.recall_ok;
    case JudgeQuestion::Iou: return a.iou_ok;
  }
  return false;
}

HttpBackend::HttpBackend(HttpJudgeOptions options) : opt_(std::move(options)) {
  const std::string& url = opt_.endpoint;
  if (url.rfind("http://", 0) != 0) fail(ErrorCode::ConfigError, "judge endpoint must be an http:// URL: " + url);
  const auto slash = url.find('/', 7);
  scheme_host_port_ = url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : url.substr(slash);
  if (scheme_host_port_.size() <= 7) fail(ErrorCode::ConfigError, "judge endpoint lacks a host: " + url);
  if (opt_.max_attempts < 1 || opt_.max_attempts > 3) fail(ErrorCode::ConfigError, "judge retries are bounded to 1..3 attempts");
}

bool HttpBackend::ask(const JudgeItem& item, JudgeQuestion q) {
  auto b64 = [](const ImageBuf& img) {
    const auto png = encode_png(img);
    return httplib::detail::base64_encode(std::string(png.begin(), png.end()));
  };
  nlohmann::json body = {{"fused_png_b64", b64(item.fused)},
                         {"seg_png_b64", b64(item.segmented)},
                         {"label", item.label},
                         {"question", std::string(question_name(q))}};
  const std::string payload = body.dump();

  httplib::Client client(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opt_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(opt_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!opt_.bearer_token.empty()) headers.emplace("Authorization", "Bearer " + opt_.bearer_token);

  std::string last_error;
  bool timed_out = false;
  for (int attempt = 0; attempt < opt_.max_attempts; ++attempt) {
    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      const auto err = res.error();
      timed_out = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout;
      last_error = httplib::to_string(err);
      continue;
    }
    if (res->status >= 500) {
      timed_out = false;
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) fail(ErrorCode::BackendError, "judge returned HTTP " + std::to_string(res->status));
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      fail(ErrorCode::BackendMalformedReply, "judge reply is not JSON");
    }
    if (!reply.is_object() || !reply.contains("answer") || !reply.at("answer").is_boolean()) {
      fail(ErrorCode::BackendMalformedReply, "judge reply lacks a boolean \"answer\"");
    }
    return reply.at("answer").get<bool>();
  }
  fail(timed_out ? ErrorCode::BackendTimeout : ErrorCode::BackendError,
       "judge request failed after " + std::to_string(opt_.max_attempts) + " attempts: " + last_error);
}

Verdict judge_sample(JudgeBackend& backend, const JudgeItem& item) {
  if (item.fused.height() != item.segmented.height() || item.fused.width() != item.segmented.width()) {
    fail(ErrorCode::ShapeMismatch, "fused and segmented images differ in size");
  }
  Verdict v;
  v.id = item.id;
  v.label = item.label;
  v.precision_ok = backend.ask(item, JudgeQuestion::Precision);
  v.recall_ok = backend.ask(item, JudgeQuestion::Recall);
  v.iou_ok = backend.ask(item, JudgeQuestion::Iou);
  return v;
}

RatioReport aggregate_ratios(const std::vector<Verdict>& verdicts) {
  if (verdicts.empty()) fail(ErrorCode::EmptyVerdictList, "no verdicts to aggregate");
  std::size_t p = 0, r = 0, i = 0;
  for (const auto& v : verdicts) {
    p += v.precision_ok;
    r += v.recall_ok;
    i += v.iou_ok;
  }
  const double n = static_cast<double>(verdicts.size());
  return {static_cast<double>(p) / n, static_cast<double>(r) / n, static_cast<double>(i) / n, verdicts.size()};
}

std::vector<Verdict> judge_all(JudgeBackend& backend, const std::vector<JudgeItem>& items, std::size_t max_in_flight) {
  std::vector<Verdict> out(items.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr first_error;
  std::mutex err_mu;

  auto worker = [&] {
    for (;;) {
      if (stop.load()) return;
      const std::size_t k = next.fetch_add(1);
      if (k >= items.size()) return;
      try {
        out[k] = judge_sample(backend, items[k]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        stop = true;
        return;
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(max_in_flight, items.size()));
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
  std::stable_sort(out.begin(), out.end(), [](const Verdict& a, const Verdict& b) { return a.id < b.id; });
  return out;
}

}  // namespace ditfuse
