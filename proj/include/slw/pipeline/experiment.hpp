#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "slw/eval/metrics.hpp"
#include "slw/pipeline/pipeline.hpp"

namespace slw {

/// Axes of a sweep. Gold sizes count annotations per class; the image count
/// follows from the mean number of objects per scene. When `gold_fractions` is
/// empty the unlabeled pool is `unlabeled_ratio` times the gold images (or
/// `unlabeled_per_class` when positive); otherwise each fraction f sets the
/// pool so that gold / (gold + unlabeled) = f.
struct ExperimentGrid {
  std::vector<int> gold_sizes{64};
  std::vector<double> gold_fractions;
  std::vector<ScoreCombiner> combiners{ScoreCombiner::constant1(), ScoreCombiner::avg(), ScoreCombiner::max()};
  std::vector<StudentInit> inits{StudentInit::Bootstrap};
  int repeats = 1;
  std::uint64_t base_seed = 0;
  double unlabeled_ratio = 8.0;
  int unlabeled_per_class = 0;
  int test_size = 128;
  bool control = true;
  bool audit = false;
};

inline void validate(const ExperimentGrid& g) {
  if (g.gold_sizes.empty() || g.combiners.empty() || g.inits.empty()) throw Error("grid: axes must be non-empty");
  if (g.repeats < 1) throw Error("grid: repeats must be >= 1");
  for (int s : g.gold_sizes) {
    if (s < 1) throw Error("grid: gold sizes must be >= 1");
  }
  for (double f : g.gold_fractions) {
    if (!(f > 0.0 && f < 1.0)) throw Error("grid: gold fractions must be in (0,1)");
  }
  if (!(g.unlabeled_ratio > 0.0)) throw Error("grid: unlabeled_ratio must be > 0");
  if (g.unlabeled_per_class < 0) throw Error("grid: unlabeled_per_class must be >= 0");
  if (g.test_size < 1) throw Error("grid: test_size must be >= 1");
}

/// Images needed for about `per_class` annotations of every class.
inline std::size_t images_for_per_class(const SceneSpec& spec, double per_class) {
  const double mean_objects = 0.5 * static_cast<double>(spec.min_objects + spec.max_objects);
  return static_cast<std::size_t>(std::max(1.0, std::round(per_class * spec.num_classes / mean_objects)));
}

struct ResultRow {
  int gold_size = 0;
  double gold_fraction = 0.0;
  std::string combiner;
  std::string init;
  std::uint64_t seed = 0;
  std::vector<double> ap;
  double map = 0.0;
  std::size_t silver_count = 0;
  double mean_alpha = 0.0;
  double silver_iou = 0.0;  // audit only
  bool ok = true;
  std::string error;
};

struct ResultTable {
  int num_classes = 0;
  bool audit = false;
  std::vector<ResultRow> rows;
};

inline std::string result_csv(const ResultTable& t) {
  std::string out = "gold_size,gold_fraction,combiner,init,seed";
  for (int c = 0; c < t.num_classes; ++c) out += ",AP_class" + std::to_string(c);
  out += ",mAP,silver_count,mean_alpha";
  if (t.audit) out += ",silver_iou";
  out += "\n";
  char buf[64];
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,", r.gold_size, r.gold_fraction);
    out += buf + r.combiner + "," + r.init + "," + std::to_string(r.seed);
    for (int c = 0; c < t.num_classes; ++c) {
      if (r.ok && static_cast<std::size_t>(c) < r.ap.size()) {
        std::snprintf(buf, sizeof buf, ",%.6f", r.ap[static_cast<std::size_t>(c)]);
        out += buf;
      } else {
        out += ",nan";
      }
    }
    if (r.ok) {
      std::snprintf(buf, sizeof buf, ",%.6f,%zu,%.6f", r.map, r.silver_count, r.mean_alpha);
    } else {
      std::snprintf(buf, sizeof buf, ",nan,%zu,nan", r.silver_count);
    }
    out += buf;
    if (t.audit) {
      std::snprintf(buf, sizeof buf, ",%.6f", r.silver_iou);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

/// Reads a table written by result_csv. Rows with a nan mAP come back as failed
/// rows without their error text.
inline ResultTable parse_result_csv(const std::string& text) {
  const auto ls = csv::lines(text);
  if (ls.empty()) throw Error("result csv: empty");
  const auto head = csv::split(ls[0]);
  ResultTable t;
  t.audit = !head.empty() && head.back() == "silver_iou";
  const std::size_t fixed = 5 + 3 + (t.audit ? 1 : 0);
  if (head.size() < fixed) throw Error("result csv: short header");
  t.num_classes = static_cast<int>(head.size() - fixed);
  const ResultTable probe{t.num_classes, t.audit, {}};
  if (result_csv(probe) != ls[0] + "\n") throw Error("result csv: unexpected header '" + ls[0] + "'");
  for (std::size_t i = 1; i < ls.size(); ++i) {
    const auto f = csv::split(ls[i]);
    const std::size_t line = i + 1;
    if (f.size() != head.size()) throw Error(csv::where(line) + "wrong field count");
    ResultRow r;
    r.gold_size = csv::to_int<int>(f[0], line);
    r.gold_fraction = csv::to_double(f[1], line);
    r.combiner = f[2];
    r.init = f[3];
    r.seed = csv::to_int<std::uint64_t>(f[4], line);
    const std::size_t m = 5 + static_cast<std::size_t>(t.num_classes);
    r.ok = f[m] != "nan";
    if (r.ok) {
      for (std::size_t c = 5; c < m; ++c) r.ap.push_back(csv::to_double(f[c], line));
      r.map = csv::to_double(f[m], line);
      r.mean_alpha = csv::to_double(f[m + 2], line);
    }
    r.silver_count = csv::to_int<std::size_t>(f[m + 1], line);
    if (t.audit) r.silver_iou = csv::to_double(f[m + 3], line);
    t.rows.push_back(std::move(r));
  }
  return t;
}

/// Teacher and classifier ensemble for one (gold images, seed) pair. Reused
/// across fractions, combiners and init modes, and across runs that share a
/// cache.
struct PhaseOne {
  Detector<float> teacher;
  std::vector<LossBreakdown> teacher_history;
  std::optional<ClassifierEnsemble> ensemble;
  double teacher_map = 0.0;
  std::vector<double> teacher_ap;
};

class ExperimentCache {
 public:
  std::shared_ptr<PhaseOne> find(std::size_t gold_images, std::uint64_t seed) {
    std::lock_guard lock(mu_);
    auto it = entries_.find({gold_images, seed});
    return it == entries_.end() ? nullptr : it->second;
  }
  void put(std::size_t gold_images, std::uint64_t seed, std::shared_ptr<PhaseOne> p) {
    std::lock_guard lock(mu_);
    entries_[{gold_images, seed}] = std::move(p);
  }

 private:
  std::mutex mu_;
  std::map<std::pair<std::size_t, std::uint64_t>, std::shared_ptr<PhaseOne>> entries_;
};

using ExperimentLog = std::function<void(const std::string&)>;

namespace detail {

struct ScenarioKey {
  int gold_size;
  std::uint64_t seed;
};

inline ResultRow failed_row(int gold, double fraction, const std::string& comb, const std::string& init,
                            std::uint64_t seed, const std::string& what) {
  ResultRow r;
  r.gold_size = gold;
  r.gold_fraction = fraction;
  r.combiner = comb;
  r.init = init;
  r.seed = seed;
  r.ok = false;
  r.error = what;
  return r;
}

/// All rows for one gold size and seed: every fraction (or the single default
/// pool), each with its control row and the combiner x init points.
inline std::vector<ResultRow> run_scenario(const ExperimentGrid& grid, const PipelineConfig& base, ScenarioKey key,
                                           ExperimentCache& cache, const ExperimentLog& log) {
  std::vector<ResultRow> rows;
  const SceneSpec& spec = base.scene;
  const std::size_t gold_images = images_for_per_class(spec, key.gold_size);
  std::vector<std::optional<double>> fractions;
  if (grid.gold_fractions.empty()) {
    fractions.push_back(std::nullopt);
  } else {
    for (double f : grid.gold_fractions) fractions.push_back(f);
  }
  std::size_t max_unlabeled = 1;
  std::vector<std::size_t> pools;
  for (const auto& f : fractions) {
    std::size_t u = 0;
    if (f) {
      u = static_cast<std::size_t>(std::max(1.0, std::round(static_cast<double>(gold_images) * (1.0 - *f) / *f)));
    } else if (grid.unlabeled_per_class > 0) {
      u = images_for_per_class(spec, grid.unlabeled_per_class);
    } else {
      u = static_cast<std::size_t>(std::max(1.0, std::round(grid.unlabeled_ratio * static_cast<double>(gold_images))));
    }
    pools.push_back(u);
    max_unlabeled = std::max(max_unlabeled, u);
  }
  auto fraction_of = [&](std::size_t i) {
    return fractions[i] ? *fractions[i]
                        : static_cast<double>(gold_images) / static_cast<double>(gold_images + pools[i]);
  };

  // Item seeds depend only on (seed, role, index), so every smaller pool is a
  // prefix of the largest one.
  Splits splits;
  std::shared_ptr<PhaseOne> p1;
  try {
    splits = generate_splits(spec, {gold_images, max_unlabeled, static_cast<std::size_t>(grid.test_size)}, key.seed);
    p1 = cache.find(gold_images, key.seed);
    const bool need_clf = std::any_of(grid.combiners.begin(), grid.combiners.end(),
                                      [](const ScoreCombiner& c) { return c.needs_classifiers(); });
    if (!p1 || (need_clf && !p1->ensemble)) {
      auto fresh = std::make_shared<PhaseOne>();
      if (p1) {
        *fresh = *p1;
      } else {
        DetectorTrainConfig tc = base.teacher;
        tc.seed = derive_seed(key.seed, "teacher");
        auto trained = train_teacher(splits.gold, base.detector, tc);
        fresh->teacher = std::move(trained.model);
        fresh->teacher_history = std::move(trained.history);
        const auto rep = evaluate(fresh->teacher, splits.test);
        fresh->teacher_map = rep.map;
        fresh->teacher_ap = rep.per_class_ap;
      }
      if (need_clf) {
        ClassifierTrainConfig cc = base.classifiers;
        cc.seed = derive_seed(key.seed, "classifiers");
        fresh->ensemble = train_classifiers(splits.gold, base.crop_size, cc);
      }
      cache.put(gold_images, key.seed, fresh);
      p1 = fresh;
    }
    if (log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "stage=teacher gold_size=%d seed=%llu teacher_map=%.6f", key.gold_size,
                    static_cast<unsigned long long>(key.seed), p1->teacher_map);
      log(buf);
    }
  } catch (const std::exception& e) {
    for (std::size_t i = 0; i < fractions.size(); ++i) {
      if (grid.control) rows.push_back(failed_row(key.gold_size, fraction_of(i), "none", "gold_only", key.seed, e.what()));
      for (const auto& c : grid.combiners) {
        for (auto in : grid.inits) rows.push_back(failed_row(key.gold_size, fraction_of(i), c.name(), init_name(in), key.seed, e.what()));
      }
    }
    return rows;
  }

  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double frac = fraction_of(i);
    if (grid.control) {
      ResultRow r;
      r.gold_size = key.gold_size;
      r.gold_fraction = frac;
      r.combiner = "none";
      r.init = "gold_only";
      r.seed = key.seed;
      r.ap = p1->teacher_ap;
      r.map = p1->teacher_map;
      rows.push_back(std::move(r));
    }
    Dataset pool = splits.unlabeled;
    pool.items.resize(pools[i]);
    std::optional<SilverResult> silver;
    double silver_iou = 0.0;
    std::string silver_error;
    try {
      silver = generate_silver(p1->teacher, pool, base.silver);
      if (grid.audit) silver_iou = silver_truth_iou(silver->silver, pool, splits.unlabeled_truth);
    } catch (const std::exception& e) {
      silver_error = e.what();
    }
    for (const auto& comb : grid.combiners) {
      std::optional<Dataset> scored;
      std::string score_error = silver_error;
      if (silver) {
        try {
          scored = attach_scores(silver->silver, p1->ensemble ? &*p1->ensemble : nullptr, comb);
        } catch (const std::exception& e) {
          score_error = e.what();
        }
      }
      for (auto init : grid.inits) {
        if (!scored) {
          rows.push_back(failed_row(key.gold_size, frac, comb.name(), init_name(init), key.seed, score_error));
          continue;
        }
        try {
          DetectorTrainConfig sc = base.student;
          sc.seed = derive_seed(key.seed, "student");
          sc.alpha_weighting = true;
          const auto student = train_student(*scored, init, &p1->teacher, base.detector, sc);
          const auto rep = evaluate(student.model, splits.test);
          ResultRow r;
          r.gold_size = key.gold_size;
          r.gold_fraction = frac;
          r.combiner = comb.name();
          r.init = init_name(init);
          r.seed = key.seed;
          r.ap = rep.per_class_ap;
          r.map = rep.map;
          r.silver_count = scored->annotation_count();
          r.mean_alpha = mean_alpha(*scored);
          r.silver_iou = silver_iou;
          if (log) {
            char buf[200];
            std::snprintf(buf, sizeof buf, "stage=student gold_size=%d fraction=%.6f combiner=%s init=%s seed=%llu map=%.6f",
                          key.gold_size, frac, r.combiner.c_str(), r.init.c_str(),
                          static_cast<unsigned long long>(key.seed), r.map);
            log(buf);
          }
          rows.push_back(std::move(r));
        } catch (const std::exception& e) {
          auto r = failed_row(key.gold_size, frac, comb.name(), init_name(init), key.seed, e.what());
          if (scored) r.silver_count = scored->annotation_count();
          rows.push_back(std::move(r));
        }
      }
    }
  }
  return rows;
}

}  // namespace detail

/// Runs every grid point: data, teacher, silver, scores, student, evaluation.
/// Seeds are base_seed + r for r < repeats. Failures are recorded in the row
/// and the sweep continues. Rows come back in grid order whatever `jobs` is.
inline ResultTable run_experiment(const ExperimentGrid& grid, const PipelineConfig& base, int jobs = 1,
                                  ExperimentCache* cache = nullptr, const ExperimentLog& log = {}) {
  validate(grid);
  ExperimentCache local;
  ExperimentCache& c = cache ? *cache : local;
  std::vector<detail::ScenarioKey> keys;
  for (int g : grid.gold_sizes) {
    for (int r = 0; r < grid.repeats; ++r) keys.push_back({g, base.seed + grid.base_seed + static_cast<std::uint64_t>(r)});
  }
  std::vector<std::vector<ResultRow>> parts(keys.size());
  std::mutex log_mu;
  ExperimentLog safe_log;
  if (log) {
    safe_log = [&](const std::string& s) {
      std::lock_guard lock(log_mu);
      log(s);
    };
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < keys.size(); i = next++) parts[i] = detail::run_scenario(grid, base, keys[i], c, safe_log);
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(keys.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  ResultTable table;
  table.num_classes = base.scene.num_classes;
  table.audit = grid.audit;
  for (auto& p : parts) {
    for (auto& r : p) table.rows.push_back(std::move(r));
  }
  return table;
}

}  // namespace slw
