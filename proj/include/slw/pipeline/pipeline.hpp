#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "slw/detector/decode.hpp"
#include "slw/detector/loss.hpp"
#include "slw/detector/network.hpp"
#include "slw/detector/train.hpp"
#include "slw/eval/iou.hpp"
#include "slw/scoring/classifier.hpp"
#include "slw/scoring/combiner.hpp"
#include "slw/synthdata/dataset.hpp"
#include "slw/synthdata/scene.hpp"
#include "slw/util/csv.hpp"

namespace slw {

enum class StudentInit { Reinit, Bootstrap };

inline const char* init_name(StudentInit i) { return i == StudentInit::Reinit ? "reinit" : "bootstrap"; }

inline StudentInit parse_init(const std::string& s) {
  if (s == "reinit") return StudentInit::Reinit;
  if (s == "bootstrap") return StudentInit::Bootstrap;
  throw Error("unknown student init '" + s + "' (expected reinit or bootstrap)");
}

/// Thresholds used when the teacher labels the unlabeled pool.
struct SilverConfig {
  double conf_threshold = 0.3;
  double nms_iou_threshold = 0.45;
  double imbalance_cap = 1.5;  // per-class cap as a multiple of the median class count; 0 disables
};

struct PipelineConfig {
  SceneSpec scene;
  DetectorConfig detector;
  DetectorTrainConfig teacher{.lr = 0.01, .momentum = 0.9, .epochs = 15, .batch_size = 8};
  DetectorTrainConfig student{.lr = 0.005, .momentum = 0.9, .epochs = 6, .batch_size = 8, .alpha_weighting = true,
                             .cosine_decay = true};
  ClassifierTrainConfig classifiers;
  int crop_size = 32;
  SilverConfig silver;
  StudentInit init = StudentInit::Bootstrap;
  ScoreCombiner combiner = ScoreCombiner::max();
  std::uint64_t seed = 0;
};

inline void validate(const SilverConfig& s) {
  if (!(s.conf_threshold > 0.0 && s.conf_threshold < 1.0)) throw Error("silver: conf_threshold must be in (0,1)");
  if (!(s.nms_iou_threshold > 0.0 && s.nms_iou_threshold < 1.0)) throw Error("silver: nms_iou_threshold must be in (0,1)");
  if (s.imbalance_cap != 0.0 && !(s.imbalance_cap >= 1.0)) throw Error("silver: imbalance_cap must be 0 or >= 1");
}

/// Phase one: the teacher is trained on gold only, without alpha weighting.
inline DetectorTrainResult<float> train_teacher(const Dataset& gold, const DetectorConfig& config,
                                                const DetectorTrainConfig& cfg) {
  if (gold.role != Role::Gold) throw Error("train_teacher: dataset role must be gold");
  DetectorTrainConfig c = cfg;
  c.alpha_weighting = false;
  auto model = build_detector<float>(config, derive_seed(cfg.seed, "teacher-init"));
  return train_detector(std::move(model), gold, c);
}

struct SilverResult {
  Dataset silver;
  std::size_t blank_images = 0;    // no surviving detection
  std::size_t capped_images = 0;   // dropped by the class-imbalance cap
  std::size_t warnings = 0;
};

namespace detail {

inline std::vector<std::size_t> class_counts(const std::vector<DatasetItem>& items, int num_classes) {
  std::vector<std::size_t> n(static_cast<std::size_t>(num_classes), 0);
  for (const auto& it : items) {
    for (const auto& s : it.scored) ++n[static_cast<std::size_t>(s.box.class_id)];
  }
  return n;
}

}  // namespace detail

/// Caps every class at ceil(cap * median) annotations, where the median runs
/// over classes that occur at all. Images are visited in order and an image is
/// dropped whole when it would push an over-represented class past the cap.
inline std::size_t apply_imbalance_cap(Dataset& silver, double cap) {
  if (cap <= 0.0 || silver.items.empty()) return 0;
  const auto counts = detail::class_counts(silver.items, silver.num_classes());
  std::vector<std::size_t> present;
  for (auto n : counts) {
    if (n > 0) present.push_back(n);
  }
  std::sort(present.begin(), present.end());
  const std::size_t mid = present.size() / 2;
  const double median = present.size() % 2 ? static_cast<double>(present[mid])
                                           : 0.5 * static_cast<double>(present[mid - 1] + present[mid]);
  const auto limit = static_cast<std::size_t>(std::ceil(cap * median));
  std::vector<std::size_t> running(counts.size(), 0);
  std::vector<DatasetItem> kept;
  std::size_t dropped = 0;
  for (auto& it : silver.items) {
    std::vector<std::size_t> here(counts.size(), 0);
    for (const auto& s : it.scored) ++here[static_cast<std::size_t>(s.box.class_id)];
    bool ok = true;
    for (std::size_t c = 0; c < counts.size(); ++c) {
      if (counts[c] > limit && here[c] > 0 && running[c] + here[c] > limit) ok = false;
    }
    if (!ok) {
      ++dropped;
      continue;
    }
    for (std::size_t c = 0; c < counts.size(); ++c) running[c] += here[c];
    kept.push_back(std::move(it));
  }
  silver.items = std::move(kept);
  return dropped;
}

/// Teacher detections for one image after threshold and NMS.
inline std::vector<Detection> teacher_detections(const Detector<float>& teacher, const Image& image,
                                                 const SilverConfig& cfg) {
  const auto out = predict(teacher, to_tensor<float>(image));
  return nms(decode(out, cfg.conf_threshold), cfg.nms_iou_threshold);
}

/// Labels the unlabeled pool with the teacher. Images without a surviving
/// detection are left out; every kept box carries det_conf and alpha 0 until
/// scored.
inline SilverResult generate_silver(const Detector<float>& teacher, const Dataset& unlabeled, const SilverConfig& cfg) {
  if (unlabeled.role != Role::Unlabeled) throw Error("generate_silver: dataset role must be unlabeled");
  validate(cfg);
  SilverResult r;
  r.silver.role = Role::Silver;
  r.silver.class_names = unlabeled.class_names;
  r.silver.seed = unlabeled.seed;
  for (const auto& it : unlabeled.items) {
    const auto dets = teacher_detections(teacher, it.image, cfg);
    if (dets.empty()) {
      ++r.blank_images;
      continue;
    }
    DatasetItem s;
    s.name = it.name;
    s.seed = it.seed;
    s.image = it.image;
    for (const auto& d : dets) {
      ScoredAnnotation a;
      a.box = quantized(d.box);
      a.alpha = 0.0;
      a.det_conf = quantize6(d.confidence);
      if (!is_valid(a.box, unlabeled.num_classes())) continue;
      s.scored.push_back(a);
    }
    if (s.scored.empty()) {
      ++r.blank_images;
      continue;
    }
    r.silver.items.push_back(std::move(s));
  }
  r.capped_images = apply_imbalance_cap(r.silver, cfg.imbalance_cap);
  if (r.silver.items.empty()) ++r.warnings;
  return r;
}

/// One row of the scores audit file.
struct ScoreRecord {
  std::string image;
  std::size_t box_index = 0;
  int class_id = 0;
  std::vector<double> member;
  double det_conf = 0.0;
  double alpha = 0.0;
};

/// Fills alpha for every silver box. Alphas are quantized like the file
/// format, so scoring a loaded or an in-memory set gives the same result and
/// repeated scoring is a fixed point.
inline Dataset attach_scores(const Dataset& silver, const ClassifierEnsemble* ensemble, const ScoreCombiner& combiner,
                             std::vector<ScoreRecord>* audit = nullptr) {
  if (silver.role != Role::Silver) throw Error("attach_scores: dataset role must be silver");
  if (combiner.needs_classifiers() && !ensemble) {
    throw Error("attach_scores: combiner " + combiner.name() + " requires classifier parameters");
  }
  Dataset out = silver;
  for (auto& it : out.items) {
    for (std::size_t i = 0; i < it.scored.size(); ++i) {
      auto& s = it.scored[i];
      std::vector<double> m;
      if (combiner.needs_classifiers()) m = member_scores(*ensemble, it.image, s.box);
      s.alpha = quantize6(combine_scores(combiner, m, s.det_conf));
      if (audit) audit->push_back({it.name, i, s.box.class_id, std::move(m), s.det_conf, s.alpha});
    }
  }
  return out;
}

inline std::string scores_csv(const std::vector<ScoreRecord>& rows, const ScoreCombiner& combiner) {
  std::string out = "image,box_index,class,s0,s1,s2,s3,det_conf,alpha,combiner\n";
  char buf[64];
  for (const auto& r : rows) {
    out += r.image + "," + std::to_string(r.box_index) + "," + std::to_string(r.class_id);
    for (std::size_t k = 0; k < kEnsembleSize; ++k) {
      if (k < r.member.size()) {
        std::snprintf(buf, sizeof buf, ",%.6f", r.member[k]);
        out += buf;
      } else {
        out += ",";
      }
    }
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,", r.det_conf, r.alpha);
    out += buf;
    out += combiner.name() + "\n";
  }
  return out;
}

/// Reads scores.csv back. Every row must name the same combiner.
inline std::vector<ScoreRecord> parse_scores_csv(const std::string& text, ScoreCombiner* combiner = nullptr) {
  const auto rows = csv::rows(text, "image,box_index,class,s0,s1,s2,s3,det_conf,alpha,combiner", 10);
  std::vector<ScoreRecord> out;
  std::string name;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& f = rows[i];
    const std::size_t line = i + 2;
    if (i == 0) name = f[9];
    if (f[9] != name) throw Error(csv::where(line) + "mixed combiners in one scores file");
    ScoreRecord r;
    r.image = f[0];
    r.box_index = csv::to_int<std::size_t>(f[1], line);
    r.class_id = csv::to_int<int>(f[2], line);
    for (std::size_t k = 3; k < 7; ++k) {
      if (f[k].empty()) break;
      r.member.push_back(csv::to_double(f[k], line));
    }
    r.det_conf = csv::to_double(f[7], line);
    r.alpha = csv::to_double(f[8], line);
    out.push_back(std::move(r));
  }
  if (combiner && !name.empty()) *combiner = ScoreCombiner::parse(name);
  return out;
}

inline double mean_alpha(const Dataset& silver) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& it : silver.items) {
    for (const auto& a : it.scored) {
      s += a.alpha;
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

/// Phase two: trains on the scored silver set with alpha weighting. Reinit
/// starts from a fresh detector; Bootstrap continues from the teacher.
inline DetectorTrainResult<float> train_student(const Dataset& silver, StudentInit init, const Detector<float>* teacher,
                                                const DetectorConfig& config, const DetectorTrainConfig& cfg) {
  if (silver.role != Role::Silver) throw Error("train_student: dataset role must be silver");
  Detector<float> start;
  if (init == StudentInit::Bootstrap) {
    if (!teacher) throw Error("train_student: bootstrap init requires teacher parameters");
    start = *teacher;
    start.config = config;
  } else {
    start = build_detector<float>(config, derive_seed(cfg.seed, "student-init"));
  }
  if (cfg.epochs == 0) return {std::move(start), {}};
  return train_detector(std::move(start), silver, cfg);
}

/// Mean IoU between each silver box and the best-overlapping true box of its
/// image, read from the hidden sidecar. Analysis only.
inline double silver_truth_iou(const Dataset& silver, const Dataset& unlabeled,
                               const std::vector<std::vector<Annotation>>& truth) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < unlabeled.items.size(); ++i) index[unlabeled.items[i].name] = i;
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& it : silver.items) {
    const auto f = index.find(it.name);
    if (f == index.end() || f->second >= truth.size()) throw Error("silver item " + it.name + " has no hidden truth");
    for (const auto& a : it.scored) {
      double best = 0.0;
      for (const auto& t : truth[f->second]) best = std::max(best, iou(a.box, t));
      s += best;
      ++n;
    }
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace slw
