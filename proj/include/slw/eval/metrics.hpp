#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "slw/detector/decode.hpp"
#include "slw/detector/network.hpp"
#include "slw/eval/iou.hpp"
#include "slw/synthdata/dataset.hpp"
#include "slw/util/csv.hpp"

namespace slw {

/// Greedy matching for one image and one class. `dets` must already be sorted
/// by confidence, descending. A detection is a true positive when the
/// unmatched ground-truth box it overlaps most (lowest index on ties) reaches
/// `iou_threshold`; each ground-truth box is matched at most once.
inline std::vector<bool> match_detections(std::span<const Detection> dets, std::span<const Annotation> gts,
                                          double iou_threshold = 0.5) {
  std::vector<bool> matched(gts.size(), false), tp(dets.size(), false);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (matched[g] || gts[g].class_id != dets[d].box.class_id) continue;
      const double v = iou(dets[d].box, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0 && best_iou >= iou_threshold) {
      matched[static_cast<std::size_t>(best)] = true;
      tp[d] = true;
    }
  }
  return tp;
}

struct ScoredFlag {
  double confidence = 0.0;
  bool tp = false;
};

/// All-points interpolated average precision. Flags are ranked by confidence
/// (stable on ties); AP = sum (r_i - r_{i-1}) * max_{j >= i} p_j. Returns 0
/// when n_gt is 0; callers exclude such classes from the mean.
inline double average_precision(std::vector<ScoredFlag> flags, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::stable_sort(flags.begin(), flags.end(),
                   [](const ScoredFlag& a, const ScoredFlag& b) { return a.confidence > b.confidence; });
  const std::size_t n = flags.size();
  std::vector<double> precision(n), recall(n);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (flags[i].tp) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return std::clamp(ap, 0.0, 1.0);
}

struct ClassCounts {
  std::size_t gt = 0, detections = 0, tp = 0, fp = 0;
};

struct EvalReport {
  std::vector<double> per_class_ap;
  std::vector<bool> included;  // class has at least one ground-truth box
  std::vector<ClassCounts> counts;
  double map = 0.0;
  double iou_threshold = 0.5;
};

/// Pools per-image detections by class and computes AP per class and mAP.
inline EvalReport evaluate_detections(const std::vector<std::vector<Detection>>& per_image_dets,
                                      const std::vector<std::vector<Annotation>>& per_image_gts, int num_classes,
                                      double iou_threshold = 0.5) {
  if (per_image_dets.size() != per_image_gts.size()) throw Error("evaluate: detections and ground truth differ in length");
  EvalReport r;
  r.iou_threshold = iou_threshold;
  r.per_class_ap.assign(static_cast<std::size_t>(num_classes), 0.0);
  r.included.assign(static_cast<std::size_t>(num_classes), false);
  r.counts.assign(static_cast<std::size_t>(num_classes), {});
  std::vector<std::vector<ScoredFlag>> flags(static_cast<std::size_t>(num_classes));
  for (std::size_t img = 0; img < per_image_dets.size(); ++img) {
    for (int c = 0; c < num_classes; ++c) {
      std::vector<Detection> dets;
      for (const auto& d : per_image_dets[img]) {
        if (d.box.class_id == c) dets.push_back(d);
      }
      std::stable_sort(dets.begin(), dets.end(),
                       [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
      std::vector<Annotation> gts;
      for (const auto& g : per_image_gts[img]) {
        if (g.class_id == c) gts.push_back(g);
      }
      const auto tp = match_detections(dets, gts, iou_threshold);
      auto& cnt = r.counts[static_cast<std::size_t>(c)];
      cnt.gt += gts.size();
      cnt.detections += dets.size();
      for (std::size_t i = 0; i < dets.size(); ++i) {
        flags[static_cast<std::size_t>(c)].push_back({dets[i].confidence, tp[i]});
        (tp[i] ? cnt.tp : cnt.fp) += 1;
      }
    }
  }
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < static_cast<std::size_t>(num_classes); ++c) {
    r.included[c] = r.counts[c].gt > 0;
    r.per_class_ap[c] = average_precision(flags[c], r.counts[c].gt);
    if (r.included[c]) {
      total += r.per_class_ap[c];
      ++n;
    }
  }
  r.map = n ? total / static_cast<double>(n) : 0.0;
  return r;
}

/// Runs the detector (decode + NMS) over the test split and scores it.
template <class T>
EvalReport evaluate(const Detector<T>& model, const Dataset& test, double iou_threshold = 0.5) {
  if (test.role != Role::Test) throw Error("evaluate: dataset role must be test");
  if (test.items.empty()) throw Error("evaluate: empty test set");
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<Annotation>> gts;
  for (const auto& it : test.items) {
    dets.push_back(detect(predict(model, to_tensor<T>(it.image)), model.config));
    gts.push_back(it.boxes);
  }
  return evaluate_detections(dets, gts, test.num_classes(), iou_threshold);
}

inline std::string report_csv(const EvalReport& r, const std::vector<std::string>& class_names) {
  std::string out = "class,AP,n_gt,n_det,tp,fp\n";
  char buf[256];
  ClassCounts all;
  for (std::size_t c = 0; c < r.per_class_ap.size(); ++c) {
    const auto& k = r.counts[c];
    const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
    std::snprintf(buf, sizeof buf, "%s,%.6f,%zu,%zu,%zu,%zu\n", name.c_str(), r.per_class_ap[c], k.gt, k.detections,
                  k.tp, k.fp);
    out += buf;
    all.gt += k.gt;
    all.detections += k.detections;
    all.tp += k.tp;
    all.fp += k.fp;
  }
  std::snprintf(buf, sizeof buf, "mAP,%.6f,%zu,%zu,%zu,%zu\n", r.map, all.gt, all.detections, all.tp, all.fp);
  return out + buf;
}

/// Reads a report written by report_csv; class names go to `class_names`.
inline EvalReport parse_report_csv(const std::string& text, std::vector<std::string>* class_names = nullptr) {
  const auto rows = csv::rows(text, "class,AP,n_gt,n_det,tp,fp", 6);
  if (rows.empty() || rows.back()[0] != "mAP") throw Error("report csv: missing mAP summary line");
  EvalReport r;
  for (std::size_t i = 0; i + 1 < rows.size(); ++i) {
    const auto& f = rows[i];
    const std::size_t line = i + 2;
    if (class_names) class_names->push_back(f[0]);
    r.per_class_ap.push_back(csv::to_double(f[1], line));
    ClassCounts k{csv::to_int<std::size_t>(f[2], line), csv::to_int<std::size_t>(f[3], line),
                  csv::to_int<std::size_t>(f[4], line), csv::to_int<std::size_t>(f[5], line)};
    r.included.push_back(k.gt > 0);
    r.counts.push_back(k);
  }
  r.map = csv::to_double(rows.back()[1], rows.size() + 1);
  return r;
}

}  // namespace slw
