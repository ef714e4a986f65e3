#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "slw/scoring/classifier.hpp"
#include "slw/synthdata/annotation.hpp"
#include "slw/synthdata/image.hpp"

namespace slw {

/// Rule turning member scores (and the teacher's own confidence) into alpha.
struct ScoreCombiner {
  enum class Kind { Constant1, Single, Avg, Max, MaxWithDetector, Detector };

  Kind kind = Kind::Max;
  int index = 0;  // member used by Single

  static ScoreCombiner constant1() { return {Kind::Constant1, 0}; }
  static ScoreCombiner single(int k) { return {Kind::Single, k}; }
  static ScoreCombiner avg() { return {Kind::Avg, 0}; }
  static ScoreCombiner max() { return {Kind::Max, 0}; }
  static ScoreCombiner max_with_detector() { return {Kind::MaxWithDetector, 0}; }
  static ScoreCombiner detector() { return {Kind::Detector, 0}; }

  bool needs_classifiers() const { return kind != Kind::Constant1 && kind != Kind::Detector; }

  std::string name() const {
    switch (kind) {
      case Kind::Constant1: return "const1";
      case Kind::Single: return "clf" + std::to_string(index);
      case Kind::Avg: return "avg";
      case Kind::Max: return "max";
      case Kind::MaxWithDetector: return "maxdet";
      case Kind::Detector: return "det";
    }
    return "?";
  }

  static ScoreCombiner parse(const std::string& s) {
    if (s == "const1") return constant1();
    if (s == "avg") return avg();
    if (s == "max") return max();
    if (s == "maxdet") return max_with_detector();
    if (s == "det") return detector();
    if (s.size() == 4 && s.rfind("clf", 0) == 0 && s[3] >= '0' && s[3] <= '3') return single(s[3] - '0');
    throw Error("unknown combiner '" + s + "' (expected const1, clf0..clf3, avg, max, maxdet or det)");
  }

  friend bool operator==(const ScoreCombiner&, const ScoreCombiner&) = default;
};

/// alpha from member scores s_k and the detector confidence.
inline double combine_scores(const ScoreCombiner& c, std::span<const double> s, double det_conf) {
  auto need = [&] {
    if (s.empty()) throw Error("combiner " + c.name() + " needs classifier scores");
  };
  double a = 1.0;
  switch (c.kind) {
    case ScoreCombiner::Kind::Constant1:
      return 1.0;
    case ScoreCombiner::Kind::Single:
      if (c.index < 0 || static_cast<std::size_t>(c.index) >= s.size()) throw Error("combiner: classifier index out of range");
      a = s[static_cast<std::size_t>(c.index)];
      break;
    case ScoreCombiner::Kind::Avg:
      need();
      a = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
      break;
    case ScoreCombiner::Kind::Max:
      need();
      a = *std::max_element(s.begin(), s.end());
      break;
    case ScoreCombiner::Kind::MaxWithDetector:
      need();
      a = std::max(*std::max_element(s.begin(), s.end()), det_conf);
      break;
    case ScoreCombiner::Kind::Detector:
      a = det_conf;
      break;
  }
  return std::clamp(a, 0.0, 1.0);
}

/// Probability each ensemble member assigns to the box's own class on its crop.
inline std::vector<double> member_scores(const ClassifierEnsemble& ens, const Image& image, const Annotation& box) {
  const Image crop = crop_resize(image, box, static_cast<std::size_t>(ens.crop_size));
  std::vector<double> s;
  for (const auto& m : ens.members) {
    const auto p = classify(m, crop);
    if (box.class_id < 0 || static_cast<std::size_t>(box.class_id) >= p.size()) throw Error("score: class id out of range");
    s.push_back(p[static_cast<std::size_t>(box.class_id)]);
  }
  return s;
}

inline double score_annotation(const ClassifierEnsemble* ens, const Image& image, const Annotation& box, double det_conf,
                               const ScoreCombiner& combiner) {
  if (!(det_conf >= 0.0 && det_conf <= 1.0)) throw Error("score_annotation: det_conf outside [0,1]");
  if (!combiner.needs_classifiers()) return combine_scores(combiner, {}, det_conf);
  if (!ens) throw Error("score_annotation: combiner " + combiner.name() + " requires classifier parameters");
  const auto s = member_scores(*ens, image, box);
  return combine_scores(combiner, s, det_conf);
}

}  // namespace slw
