#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "slw/pipeline/experiment.hpp"
#include "slw/pipeline/pipeline.hpp"

namespace slw {

/// Everything a command can be configured with. Files use one
/// `section.key = value` per line; `#` starts a comment.
struct RunConfig {
  PipelineConfig pipeline;
  SplitSizes splits{160, 1280, 128};
  double eval_iou_threshold = 0.5;
  ExperimentGrid sweep;
  int jobs = 1;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // prefer the shortest form that reads back to the same value
  for (int p = 1; p <= 17; ++p) {
    char s[40];
    std::snprintf(s, sizeof s, "%.*g", p, v);
    if (std::strtod(s, nullptr) == v) return s;
  }
  return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

inline long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

struct ConfigField {
  std::string key;
  std::string doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define SLW_INT(KEY, DOC, EXPR)                                                                  \
  ConfigField {                                                                                  \
    KEY, DOC, [](const RunConfig& c) { return std::to_string(c.EXPR); },                         \
        [](RunConfig& c, const std::string& v) { c.EXPR = static_cast<decltype(c.EXPR)>(parse_int(KEY, v)); } \
  }
#define SLW_U64(KEY, DOC, EXPR)                                                          \
  ConfigField {                                                                          \
    KEY, DOC, [](const RunConfig& c) { return std::to_string(c.EXPR); },                 \
        [](RunConfig& c, const std::string& v) { c.EXPR = parse_u64(KEY, v); }           \
  }
#define SLW_DBL(KEY, DOC, EXPR)                                                          \
  ConfigField {                                                                          \
    KEY, DOC, [](const RunConfig& c) { return fmt_double(c.EXPR); },                     \
        [](RunConfig& c, const std::string& v) { c.EXPR = parse_double(KEY, v); }        \
  }
#define SLW_BOOL(KEY, DOC, EXPR)                                                                     \
  ConfigField {                                                                                      \
    KEY, DOC, [](const RunConfig& c) { return std::string(c.EXPR ? "true" : "false"); },             \
        [](RunConfig& c, const std::string& v) { c.EXPR = parse_bool(KEY, v); }                      \
  }

inline std::string conf_target_name(ConfTarget t) { return t == ConfTarget::One ? "one" : "iou"; }
inline std::string noobj_name(NoobjAlpha a) { return a == NoobjAlpha::Mean ? "mean" : "one"; }

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = [] {
    std::vector<ConfigField> f;
    f.push_back(SLW_U64("run.seed", "master seed; every stage derives its own stream from it", pipeline.seed));

    f.push_back(SLW_INT("scene.image_size", "image side in pixels", pipeline.scene.image_size));
    f.push_back(SLW_INT("scene.num_classes", "shape classes used (disk, square, triangle, ring, cross), 1..5",
                        pipeline.scene.num_classes));
    f.push_back(SLW_INT("scene.min_objects", "fewest objects per image", pipeline.scene.min_objects));
    f.push_back(SLW_INT("scene.max_objects", "most objects per image", pipeline.scene.max_objects));
    f.push_back(SLW_DBL("scene.min_size", "smallest box side as a fraction of the image", pipeline.scene.min_size));
    f.push_back(SLW_DBL("scene.max_size", "largest box side as a fraction of the image", pipeline.scene.max_size));
    f.push_back(SLW_DBL("scene.aspect_jitter", "side ratio drawn from [1-j, 1+j]", pipeline.scene.aspect_jitter));
    f.push_back(SLW_DBL("scene.color_jitter", "per-object colour jitter", pipeline.scene.color_jitter));
    f.push_back(SLW_DBL("scene.texture_noise", "per-pixel noise inside objects", pipeline.scene.texture_noise));
    f.push_back(SLW_DBL("scene.background_noise", "per-pixel background noise", pipeline.scene.background_noise));
    f.push_back(SLW_DBL("scene.max_overlap_iou", "largest IoU allowed between objects of one image",
                        pipeline.scene.max_overlap_iou));

    f.push_back(SLW_INT("splits.gold", "gold images written by gen-data", splits.gold));
    f.push_back(SLW_INT("splits.unlabeled", "unlabeled images written by gen-data", splits.unlabeled));
    f.push_back(SLW_INT("splits.test", "test images written by gen-data", splits.test));

    f.push_back(SLW_INT("detector.grid", "grid side S", pipeline.detector.grid));
    f.push_back(SLW_INT("detector.boxes_per_cell", "boxes per cell B", pipeline.detector.boxes_per_cell));
    f.push_back(SLW_DBL("detector.lambda_coord", "weight of the centre and size terms", pipeline.detector.lambda_coord));
    f.push_back(SLW_DBL("detector.lambda_noobj", "weight of the no-object term", pipeline.detector.lambda_noobj));
    f.push_back(SLW_DBL("detector.conf_threshold", "detection threshold used for evaluation",
                        pipeline.detector.conf_threshold));
    f.push_back(SLW_DBL("detector.nms_iou_threshold", "NMS overlap threshold", pipeline.detector.nms_iou_threshold));
    f.push_back({"detector.conf_target", "object-confidence target of responsible boxes: one | iou",
                 [](const RunConfig& c) { return conf_target_name(c.pipeline.detector.conf_target); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "one") c.pipeline.detector.conf_target = ConfTarget::One;
                   else if (v == "iou") c.pipeline.detector.conf_target = ConfTarget::Iou;
                   else throw ConfigError("detector.conf_target: expected one or iou, got '" + v + "'");
                 }});

    for (const char* which : {"teacher", "student"}) {
      const std::string p = which;
      auto pick = [p](RunConfig& c) -> DetectorTrainConfig& {
        return p == "teacher" ? c.pipeline.teacher : c.pipeline.student;
      };
      auto cpick = [p](const RunConfig& c) -> const DetectorTrainConfig& {
        return p == "teacher" ? c.pipeline.teacher : c.pipeline.student;
      };
      f.push_back({p + ".lr", "learning rate", [cpick](const RunConfig& c) { return fmt_double(cpick(c).lr); },
                   [pick, p](RunConfig& c, const std::string& v) { pick(c).lr = parse_double(p + ".lr", v); }});
      f.push_back({p + ".momentum", "SGD momentum",
                   [cpick](const RunConfig& c) { return fmt_double(cpick(c).momentum); },
                   [pick, p](RunConfig& c, const std::string& v) { pick(c).momentum = parse_double(p + ".momentum", v); }});
      f.push_back({p + ".epochs", "passes over the training set",
                   [cpick](const RunConfig& c) { return std::to_string(cpick(c).epochs); },
                   [pick, p](RunConfig& c, const std::string& v) {
                     pick(c).epochs = static_cast<int>(parse_int(p + ".epochs", v));
                   }});
      f.push_back({p + ".batch_size", "images per step",
                   [cpick](const RunConfig& c) { return std::to_string(cpick(c).batch_size); },
                   [pick, p](RunConfig& c, const std::string& v) {
                     pick(c).batch_size = static_cast<int>(parse_int(p + ".batch_size", v));
                   }});
      f.push_back({p + ".grad_clip", "global gradient-norm clip, 0 disables",
                   [cpick](const RunConfig& c) { return fmt_double(cpick(c).grad_clip); },
                   [pick, p](RunConfig& c, const std::string& v) { pick(c).grad_clip = parse_double(p + ".grad_clip", v); }});
      f.push_back({p + ".cosine_decay", "decay the learning rate to 0 along a half cosine",
                   [cpick](const RunConfig& c) { return std::string(cpick(c).cosine_decay ? "true" : "false"); },
                   [pick, p](RunConfig& c, const std::string& v) {
                     pick(c).cosine_decay = parse_bool(p + ".cosine_decay", v);
                   }});
    }
    f.push_back({"student.noobj_alpha", "weight of the no-object term under alpha weighting: mean | one",
                 [](const RunConfig& c) { return noobj_name(c.pipeline.student.noobj_alpha); },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "mean") c.pipeline.student.noobj_alpha = NoobjAlpha::Mean;
                   else if (v == "one") c.pipeline.student.noobj_alpha = NoobjAlpha::One;
                   else throw ConfigError("student.noobj_alpha: expected mean or one, got '" + v + "'");
                 }});
    f.push_back({"student.init", "student start: reinit | bootstrap",
                 [](const RunConfig& c) { return std::string(init_name(c.pipeline.init)); },
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.pipeline.init = parse_init(v);
                   } catch (const Error& e) {
                     throw ConfigError(std::string("student.init: ") + e.what());
                   }
                 }});

    f.push_back(SLW_DBL("classifiers.lr", "learning rate", pipeline.classifiers.lr));
    f.push_back(SLW_DBL("classifiers.momentum", "SGD momentum", pipeline.classifiers.momentum));
    f.push_back(SLW_INT("classifiers.epochs", "passes over the gold crops", pipeline.classifiers.epochs));
    f.push_back(SLW_INT("classifiers.batch_size", "crops per step", pipeline.classifiers.batch_size));
    f.push_back(SLW_DBL("classifiers.holdout_fraction", "share of crops kept aside for accuracy",
                        pipeline.classifiers.holdout_fraction));
    f.push_back(SLW_INT("classifiers.crop_size", "crop side in pixels, a multiple of 8", pipeline.crop_size));

    f.push_back(SLW_DBL("silver.conf_threshold", "teacher confidence needed to keep a box", pipeline.silver.conf_threshold));
    f.push_back(SLW_DBL("silver.nms_iou_threshold", "NMS overlap threshold for pseudo-labels",
                        pipeline.silver.nms_iou_threshold));
    f.push_back(SLW_DBL("silver.imbalance_cap", "per-class cap as a multiple of the median class count, 0 disables",
                        pipeline.silver.imbalance_cap));
    f.push_back({"score.combiner", "alpha rule: const1 | clf0..clf3 | avg | max | maxdet | det",
                 [](const RunConfig& c) { return c.pipeline.combiner.name(); },
                 [](RunConfig& c, const std::string& v) {
                   try {
                     c.pipeline.combiner = ScoreCombiner::parse(v);
                   } catch (const Error& e) {
                     throw ConfigError(std::string("score.combiner: ") + e.what());
                   }
                 }});

    f.push_back(SLW_DBL("eval.iou_threshold", "IoU needed for a true positive", eval_iou_threshold));

    f.push_back({"sweep.gold_sizes", "gold annotations per class, comma-separated",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.sweep.gold_sizes.size(); ++i) {
                     s += (i ? "," : "") + std::to_string(c.sweep.gold_sizes[i]);
                   }
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.sweep.gold_sizes.clear();
                   for (const auto& x : split_list(v)) {
                     c.sweep.gold_sizes.push_back(static_cast<int>(parse_int("sweep.gold_sizes", x)));
                   }
                 }});
    f.push_back({"sweep.gold_fractions", "gold share of gold + unlabeled, comma-separated; empty uses the ratio",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.sweep.gold_fractions.size(); ++i) {
                     s += (i ? "," : "") + fmt_double(c.sweep.gold_fractions[i]);
                   }
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.sweep.gold_fractions.clear();
                   for (const auto& x : split_list(v)) c.sweep.gold_fractions.push_back(parse_double("sweep.gold_fractions", x));
                 }});
    f.push_back({"sweep.combiners", "combiners, comma-separated",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.sweep.combiners.size(); ++i) s += (i ? "," : "") + c.sweep.combiners[i].name();
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.sweep.combiners.clear();
                   for (const auto& x : split_list(v)) {
                     try {
                       c.sweep.combiners.push_back(ScoreCombiner::parse(x));
                     } catch (const Error& e) {
                       throw ConfigError(std::string("sweep.combiners: ") + e.what());
                     }
                   }
                 }});
    f.push_back({"sweep.inits", "student inits, comma-separated",
                 [](const RunConfig& c) {
                   std::string s;
                   for (std::size_t i = 0; i < c.sweep.inits.size(); ++i) s += std::string(i ? "," : "") + init_name(c.sweep.inits[i]);
                   return s;
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.sweep.inits.clear();
                   for (const auto& x : split_list(v)) {
                     try {
                       c.sweep.inits.push_back(parse_init(x));
                     } catch (const Error& e) {
                       throw ConfigError(std::string("sweep.inits: ") + e.what());
                     }
                   }
                 }});
    f.push_back(SLW_INT("sweep.repeats", "seeds per grid point (run.seed + r)", sweep.repeats));
    f.push_back(SLW_DBL("sweep.unlabeled_ratio", "unlabeled images per gold image", sweep.unlabeled_ratio));
    f.push_back(SLW_INT("sweep.unlabeled_per_class", "fixed unlabeled pool in annotations per class, 0 uses the ratio",
                        sweep.unlabeled_per_class));
    f.push_back(SLW_INT("sweep.test_size", "test images per seed", sweep.test_size));
    f.push_back(SLW_BOOL("sweep.control", "emit the teacher-only control row", sweep.control));
    f.push_back(SLW_INT("sweep.jobs", "worker threads", jobs));
    return f;
  }();
  return fields;
}

#undef SLW_INT
#undef SLW_U64
#undef SLW_DBL
#undef SLW_BOOL

}  // namespace detail

/// Range checks for every field; throws ConfigError naming the key.
inline void validate(const RunConfig& c) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  const auto& p = c.pipeline;
  need(p.scene.image_size >= 16 && p.scene.image_size <= 1024, "scene.image_size must be in [16,1024]");
  need(p.scene.num_classes >= 1 && p.scene.num_classes <= 5, "scene.num_classes must be in [1,5]");
  need(p.scene.min_objects >= 1 && p.scene.max_objects >= p.scene.min_objects, "scene objects: need 1 <= min <= max");
  need(p.scene.min_size > 0 && p.scene.max_size <= 1 && p.scene.min_size <= p.scene.max_size,
       "scene sizes: need 0 < min_size <= max_size <= 1");
  try {
    validate(p.scene);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  need(c.splits.gold >= 1 && c.splits.unlabeled >= 1 && c.splits.test >= 1, "splits.*: sizes must be >= 1");
  DetectorConfig d = p.detector;
  d.num_classes = p.scene.num_classes;
  d.input_size = p.scene.image_size;
  try {
    validate(d);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  need(p.scene.image_size == 16 * p.detector.grid, "detector.grid must equal scene.image_size / 16");
  for (const auto* t : {&p.teacher, &p.student}) {
    const std::string s = t == &p.teacher ? "teacher" : "student";
    need(t->lr >= 0, s + ".lr must be >= 0");
    need(t->momentum >= 0 && t->momentum < 1, s + ".momentum must be in [0,1)");
    need(t->epochs >= 0, s + ".epochs must be >= 0");
    need(t->batch_size >= 1, s + ".batch_size must be >= 1");
    need(t->grad_clip >= 0, s + ".grad_clip must be >= 0");
  }
  need(p.classifiers.lr >= 0, "classifiers.lr must be >= 0");
  need(p.classifiers.momentum >= 0 && p.classifiers.momentum < 1, "classifiers.momentum must be in [0,1)");
  need(p.classifiers.epochs >= 0, "classifiers.epochs must be >= 0");
  need(p.classifiers.batch_size >= 1, "classifiers.batch_size must be >= 1");
  need(p.classifiers.holdout_fraction >= 0 && p.classifiers.holdout_fraction < 1,
       "classifiers.holdout_fraction must be in [0,1)");
  need(p.crop_size >= 8 && p.crop_size % 8 == 0 && p.crop_size <= 256, "classifiers.crop_size must be a multiple of 8 in [8,256]");
  try {
    validate(p.silver);
    validate(c.sweep);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  need(c.eval_iou_threshold > 0 && c.eval_iou_threshold <= 1, "eval.iou_threshold must be in (0,1]");
  need(c.jobs >= 1 && c.jobs <= 256, "sweep.jobs must be in [1,256]");
}

/// Detector config with the scene-derived fields filled in.
inline DetectorConfig detector_config(const RunConfig& c) {
  DetectorConfig d = c.pipeline.detector;
  d.num_classes = c.pipeline.scene.num_classes;
  d.input_size = c.pipeline.scene.image_size;
  return d;
}

/// Applies `section.key = value` lines on top of `base`. Unknown keys,
/// repeated keys and malformed lines are errors.
inline RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>",
                                  RunConfig base = {}) {
  std::map<std::string, const detail::ConfigField*> by_key;
  for (const auto& f : detail::config_fields()) by_key[f.key] = &f;
  std::map<std::string, std::size_t> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(lineno) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected 'section.key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto f = by_key.find(key);
    if (f == by_key.end()) throw ConfigError(where + "unknown key '" + key + "'");
    if (auto s = seen.find(key); s != seen.end()) {
      throw ConfigError(where + "key '" + key + "' already set on line " + std::to_string(s->second));
    }
    seen[key] = lineno;
    try {
      f->second->set(base, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  try {
    validate(base);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return base;
}

inline RunConfig load_run_config(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw ConfigError("cannot read config " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), p.string());
}

/// Every key with its value; with `docs`, each preceded by its description.
inline std::string serialize_run_config(const RunConfig& c, bool docs = true) {
  std::string out;
  std::string section;
  for (const auto& f : detail::config_fields()) {
    const std::string s = f.key.substr(0, f.key.find('.'));
    if (docs && s != section) {
      if (!section.empty()) out += "\n";
      section = s;
    }
    if (docs) out += "# " + f.doc + "\n";
    out += f.key + " = " + f.get(c) + "\n";
  }
  return out;
}

inline std::vector<std::string> run_config_keys() {
  std::vector<std::string> out;
  for (const auto& f : detail::config_fields()) out.push_back(f.key);
  return out;
}

}  // namespace slw
