#pragma once

// Layout-fidelity metrics: confusion-matrix IoU scores and landmark RMSE.

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smis/archive.hpp"
#include "smis/mask.hpp"

namespace smis {

struct MetricError : std::domain_error {
  using std::domain_error::domain_error;
};

// counts[gt * C + pred]. Pixels whose prediction is UNKNOWN count towards
// their ground-truth class as misses.
struct ConfusionMatrix {
  int class_count = 0;
  std::vector<std::uint64_t> counts;
  std::vector<std::uint64_t> unpredicted;
  std::uint64_t ignored_pixels = 0;

  explicit ConfusionMatrix(int classes = 0)
      : class_count(classes), counts(static_cast<std::size_t>(classes) * classes, 0), unpredicted(classes, 0) {}

  static ConfusionMatrix from_counts(const std::vector<std::vector<std::uint64_t>>& rows) {
    ConfusionMatrix m(static_cast<int>(rows.size()));
    for (std::size_t g = 0; g < rows.size(); ++g)
      for (std::size_t p = 0; p < rows.size(); ++p) m.counts[g * rows.size() + p] = rows[g].at(p);
    return m;
  }

  std::uint64_t at(int gt, int pred) const { return counts[static_cast<std::size_t>(gt) * class_count + pred]; }

  std::uint64_t gt_total(int c) const {
    std::uint64_t s = unpredicted[c];
    for (int p = 0; p < class_count; ++p) s += at(c, p);
    return s;
  }
  std::uint64_t pred_total(int c) const {
    std::uint64_t s = 0;
    for (int g = 0; g < class_count; ++g) s += at(g, c);
    return s;
  }
  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (int c = 0; c < class_count; ++c) s += gt_total(c);
    return s;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.class_count != class_count) throw InputError("confusion matrices differ in class count");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    for (int c = 0; c < class_count; ++c) unpredicted[c] += o.unpredicted[c];
    ignored_pixels += o.ignored_pixels;
    return *this;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix accumulate_confusion(const SemanticMask& pred, const SemanticMask& gt, ConfusionMatrix running) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw InputError("prediction is " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                     ", ground truth is " + std::to_string(gt.width) + "x" + std::to_string(gt.height));
  if (pred.class_count != gt.class_count || running.class_count != gt.class_count)
    throw InputError("prediction, ground truth and matrix differ in class count");
  const int C = gt.class_count;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const ClassId g = gt.labels[i], p = pred.labels[i];
    if (g == kUnknown) {
      ++running.ignored_pixels;
      continue;
    }
    if (g >= C || (p != kUnknown && p >= C)) throw InputError("class id out of range in confusion accumulation");
    if (p == kUnknown)
      ++running.unpredicted[g];
    else
      ++running.counts[static_cast<std::size_t>(g) * C + p];
  }
  return running;
}

// IoU per class; NaN where the union is empty.
inline std::vector<double> class_iou(const ConfusionMatrix& m) {
  std::vector<double> out(m.class_count);
  for (int c = 0; c < m.class_count; ++c) {
    const double tp = static_cast<double>(m.at(c, c));
    const double uni = static_cast<double>(m.gt_total(c)) + static_cast<double>(m.pred_total(c)) - tp;
    out[c] = uni > 0 ? tp / uni : std::nan("");
  }
  return out;
}

// Sums run in long double so small rational cases round to the nearest double.
inline double miou(const ConfusionMatrix& m) {
  long double s = 0;
  int n = 0;
  for (int c = 0; c < m.class_count; ++c) {
    const auto tp = static_cast<long double>(m.at(c, c));
    const auto uni = static_cast<long double>(m.gt_total(c)) + static_cast<long double>(m.pred_total(c)) - tp;
    if (uni > 0) {
      s += tp / uni;
      ++n;
    }
  }
  if (n == 0) throw MetricError("mIoU undefined: every class has an empty union");
  return static_cast<double>(s / n);
}

inline double fwiou(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) throw MetricError("fwIoU undefined: empty confusion matrix");
  long double s = 0;
  for (int c = 0; c < m.class_count; ++c) {
    const auto tp = static_cast<long double>(m.at(c, c));
    const auto uni = static_cast<long double>(m.gt_total(c)) + static_cast<long double>(m.pred_total(c)) - tp;
    if (uni > 0) s += static_cast<long double>(m.gt_total(c)) * tp / (static_cast<long double>(total) * uni);
  }
  return static_cast<double>(s);
}

inline double pixel_accuracy(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) throw MetricError("pixel accuracy undefined: empty confusion matrix");
  std::uint64_t tr = 0;
  for (int c = 0; c < m.class_count; ++c) tr += m.at(c, c);
  return static_cast<double>(tr) / static_cast<double>(total);
}

struct Landmark {
  std::string name;
  double x = 0, y = 0;
};

struct LandmarkSet {
  std::vector<Landmark> points;
  bool detected = true;
};

inline void to_json(json& j, const LandmarkSet& s) {
  json pts = json::array();
  for (const auto& p : s.points) pts.push_back({{"name", p.name}, {"x", p.x}, {"y", p.y}});
  j = json{{"detected", s.detected}, {"points", pts}};
}
inline void from_json(const json& j, LandmarkSet& s) {
  s.detected = j.value("detected", true);
  s.points.clear();
  for (const auto& p : j.value("points", json::array()))
    s.points.push_back({p.at("name").get<std::string>(), p.at("x").get<double>(), p.at("y").get<double>()});
}

struct LandmarkScore {
  double rmse = 0;
  int na_count = 0;
  std::size_t matched = 0;
};

struct LandmarkMetricError : MetricError {
  LandmarkMetricError(const std::string& msg, int na) : MetricError(msg), na_count(na) {}
  int na_count;
};

// Pools the squared distances of every matched (image, landmark name) pair.
inline LandmarkScore landmark_rmse(const std::vector<LandmarkSet>& pred, const std::vector<LandmarkSet>& gt) {
  if (pred.size() != gt.size()) throw InputError("landmark lists differ in length");
  LandmarkScore out;
  double sq = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt[i].detected) throw InputError("ground-truth landmark set " + std::to_string(i) + " is marked undetected");
    if (!pred[i].detected) {
      ++out.na_count;
      continue;
    }
    std::map<std::string, const Landmark*> by_name;
    for (const auto& p : pred[i].points) by_name[p.name] = &p;
    for (const auto& g : gt[i].points) {
      auto it = by_name.find(g.name);
      if (it == by_name.end()) continue;
      const double dx = it->second->x - g.x, dy = it->second->y - g.y;
      sq += dx * dx + dy * dy;
      ++out.matched;
    }
  }
  if (out.matched == 0) throw LandmarkMetricError("landmark RMSE undefined: no matched landmarks", out.na_count);
  out.rmse = std::sqrt(sq / static_cast<double>(out.matched));
  return out;
}

}  // namespace smis
