#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "wildfire/batch.hpp"
#include "wildfire/firemask.hpp"
#include "wildfire/parallel.hpp"

namespace wildfire::metrics {

/// Pixel tallies with fire as the positive class.
struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) { return a += b; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct MetricsReport {
  double precision = 0, recall = 0, f_score = 0, iou = 0;
  ConfusionCounts counts;
  double threshold = 0.5;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Pixel is fire iff its probability is >= threshold.
template <class T>
FireMask binarize(const std::vector<T>& probs, std::uint32_t width, std::uint32_t height, double threshold) {
  if (probs.size() != std::size_t{width} * height) throw ShapeError("binarize: map size does not match extent");
  FireMask m(width, height, "prediction");
  for (std::size_t i = 0; i < probs.size(); ++i) m.bits[i] = static_cast<double>(probs[i]) >= threshold ? 1 : 0;
  return m;
}

/// Tally over the top-left rows×cols region (the whole mask by default).
inline ConfusionCounts confusion(const FireMask& pred, const FireMask& truth, std::uint32_t rows = UINT32_MAX,
                                 std::uint32_t cols = UINT32_MAX) {
  if (!pred.same_shape(truth))
    throw ShapeError("confusion: prediction is " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                     " but truth is " + std::to_string(truth.width) + "x" + std::to_string(truth.height));
  rows = std::min(rows, truth.height);
  cols = std::min(cols, truth.width);
  ConfusionCounts c;
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t k = 0; k < cols; ++k) {
      const bool p = pred.at(r, k) != 0, t = truth.at(r, k) != 0;
      if (p && t) ++c.tp;
      else if (p) ++c.fp;
      else if (t) ++c.fn;
      else ++c.tn;
    }
  return c;
}

/// precision = tp/(tp+fp), recall = tp/(tp+fn), F = 2tp/(2tp+fp+fn) (the
/// harmonic mean of the two), IoU = tp/(tp+fp+fn). A ratio with a zero
/// denominator is 0, except that all four are 1 when neither prediction nor
/// truth contains fire (tp = fp = fn = 0).
inline MetricsReport compute_metrics(const ConfusionCounts& c, double threshold = 0.5) {
  MetricsReport r;
  r.counts = c;
  r.threshold = threshold;
  if (c.tp == 0 && c.fp == 0 && c.fn == 0) {
    r.precision = r.recall = r.f_score = r.iou = 1.0;
    return r;
  }
  auto ratio = [](std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.f_score = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  r.iou = ratio(c.tp, c.tp + c.fp + c.fn);
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {{"precision", r.precision},
          {"recall", r.recall},
          {"f_score", r.f_score},
          {"iou", r.iou},
          {"threshold", r.threshold},
          {"counts", {{"tp", r.counts.tp}, {"fp", r.counts.fp}, {"fn", r.counts.fn}, {"tn", r.counts.tn}}}};
}

/// Checks a report document: the four metrics in [0,1], a threshold in
/// (0,1), non-negative integer counts, and metrics consistent with counts.
inline void validate_report_json(const nlohmann::json& j) {
  auto fail = [](const std::string& why) { throw FormatError("metrics report: " + why); };
  if (!j.is_object()) fail("not an object");
  for (const char* k : {"precision", "recall", "f_score", "iou"}) {
    if (!j.contains(k) || !j.at(k).is_number()) fail(std::string("missing number '") + k + "'");
    const double v = j.at(k).get<double>();
    if (!(v >= 0.0 && v <= 1.0)) fail(std::string("'") + k + "' outside [0,1]");
  }
  if (!j.contains("threshold") || !j.at("threshold").is_number()) fail("missing threshold");
  const double th = j.at("threshold").get<double>();
  if (!(th > 0.0 && th < 1.0)) fail("threshold outside (0,1)");
  if (!j.contains("counts") || !j.at("counts").is_object()) fail("missing counts");
  ConfusionCounts c;
  std::uint64_t* fields[] = {&c.tp, &c.fp, &c.fn, &c.tn};
  const char* names[] = {"tp", "fp", "fn", "tn"};
  for (int i = 0; i < 4; ++i) {
    const auto& counts = j.at("counts");
    if (!counts.contains(names[i]) || !counts.at(names[i]).is_number_unsigned())
      fail(std::string("count '") + names[i] + "' is not a non-negative integer");
    *fields[i] = counts.at(names[i]).get<std::uint64_t>();
  }
  const auto expect = compute_metrics(c, th);
  if (j.at("precision").get<double>() != expect.precision || j.at("recall").get<double>() != expect.recall ||
      j.at("f_score").get<double>() != expect.f_score || j.at("iou").get<double>() != expect.iou)
    fail("metrics do not follow from the counts");
}

/// Text table with the columns Method | Precision | Recall | F-score | IoU,
/// values in percent.
inline std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::size_t name_w = 6;
  for (const auto& [name, _] : rows) name_w = std::max(name_w, name.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %9s  %9s  %9s  %9s\n", static_cast<int>(name_w), "Method", "Precision",
                "Recall", "F-score", "IoU");
  out += buf;
  out += std::string(name_w + 4 * 11, '-') + "\n";
  for (const auto& [name, r] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s  %9.2f  %9.2f  %9.2f  %9.2f\n", static_cast<int>(name_w), name.c_str(),
                  100 * r.precision, 100 * r.recall, 100 * r.f_score, 100 * r.iou);
    out += buf;
  }
  return out;
}

struct Evaluation {
  MetricsReport report;
  std::vector<std::pair<std::string, ConfusionCounts>> per_sample;
};

/// Micro-averaged evaluation: confusion counts are pooled over every sample
/// (within its valid region) before the metrics are computed once.
template <class T>
Evaluation evaluate(models::SegmentationModel<T>& model, const std::vector<PatchSample>& samples, double threshold,
                    std::size_t batch_size = 8, std::size_t workers = 1) {
  if (samples.empty()) throw ConfigError("evaluation needs at least one sample");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must lie in (0,1)");
  const auto probs = predict(model, samples, batch_size);
  Evaluation ev;
  ev.per_sample.resize(samples.size());
  parallel_for(samples.size(), workers, [&](std::size_t i) {
    const auto& s = samples[i];
    FireMask truth(s.width, s.height);
    truth.bits = s.mask;
    const auto pred = binarize(probs[i], s.width, s.height, threshold);
    ev.per_sample[i] = {s.id, confusion(pred, truth, s.valid_height, s.valid_width)};
  });
  ConfusionCounts total;
  for (const auto& [_, c] : ev.per_sample) total += c;
  ev.report = compute_metrics(total, threshold);
  return ev;
}

}  // namespace wildfire::metrics
