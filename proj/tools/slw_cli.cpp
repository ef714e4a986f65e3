#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "slw/cli/manifest.hpp"
#include "slw/cli/run_config.hpp"
#include "slw/detector/io.hpp"
#include "slw/eval/metrics.hpp"
#include "slw/pipeline/experiment.hpp"
#include "slw/pipeline/pipeline.hpp"

#ifndef SLW_VERSION
#define SLW_VERSION "dev"
#endif
#ifndef SLW_GIT_REV
#define SLW_GIT_REV "unknown"
#endif
#ifndef SLW_BUILD_TYPE
#define SLW_BUILD_TYPE "unknown"
#endif

namespace fs = std::filesystem;
using namespace slw;

namespace {

void log_kv(const std::string& line) { std::cerr << line << "\n"; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;

  RunConfig load() const {
    RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
    if (seed) c.pipeline.seed = *seed;
    return c;
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "config file (section.key = value)");
  sub->add_option("--seed", c.seed, "master seed, overrides run.seed");
}

/// Accepts either a split directory or a gen-data root holding <role>/.
Dataset open_split(const fs::path& dir, Role role) {
  fs::path p = dir;
  if (!fs::exists(p / "manifest.txt") && fs::exists(p / role_name(role) / "manifest.txt")) p = p / role_name(role);
  if (!fs::exists(p / "manifest.txt")) throw Error("no dataset manifest in " + dir.string());
  Dataset d = read_dataset(p);
  if (d.role != role) {
    throw Error(dir.string() + ": expected a " + role_name(role) + " split, found " + role_name(d.role));
  }
  return d;
}

void write_text_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
  if (!f) throw Error("write failed: " + p.string());
}

void check_classes(const Dataset& d, const RunConfig& c) {
  if (d.num_classes() != c.pipeline.scene.num_classes) {
    throw Error("dataset has " + std::to_string(d.num_classes()) + " classes, config expects " +
                std::to_string(c.pipeline.scene.num_classes));
  }
}

std::string run_gen_data(const RunConfig& c, const fs::path& out) {
  const auto splits = generate_splits(c.pipeline.scene, c.splits, c.pipeline.seed);
  write_dataset(splits.gold, out / "gold");
  write_dataset(splits.unlabeled, out / "unlabeled");
  write_hidden_truth(splits.unlabeled, splits.unlabeled_truth, out / "unlabeled");
  write_dataset(splits.test, out / "test");
  write_text_file(out / "config.txt", serialize_run_config(c));
  log_kv("stage=gen-data gold=" + std::to_string(splits.gold.size()) + " unlabeled=" +
         std::to_string(splits.unlabeled.size()) + " test=" + std::to_string(splits.test.size()));
  return "images=" + std::to_string(splits.gold.size() + splits.unlabeled.size() + splits.test.size());
}

std::string run_train_teacher(const RunConfig& c, const fs::path& data, const fs::path& out) {
  const Dataset gold = open_split(data, Role::Gold);
  check_classes(gold, c);
  DetectorTrainConfig tc = c.pipeline.teacher;
  tc.seed = derive_seed(c.pipeline.seed, "teacher");
  const auto r = train_teacher(gold, detector_config(c), tc);
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    log_kv("stage=train-teacher epoch=" + std::to_string(e) + " loss=" + fmt("%.6f", r.history[e].total));
  }
  save_detector(out, r.model);
  write_text_file(out.string() + ".loss.csv", loss_history_csv(r.history));
  return "epochs=" + std::to_string(r.history.size()) +
         (r.history.empty() ? "" : " final_loss=" + fmt("%.6f", r.history.back().total));
}

std::string run_pseudolabel(const RunConfig& c, const fs::path& teacher_path, const fs::path& unl, const fs::path& out) {
  const Dataset unlabeled = open_split(unl, Role::Unlabeled);
  check_classes(unlabeled, c);
  const auto teacher = load_detector(teacher_path, detector_config(c));
  const auto r = generate_silver(teacher, unlabeled, c.pipeline.silver);
  write_dataset(r.silver, out);
  log_kv("stage=pseudolabel images=" + std::to_string(r.silver.size()) + " boxes=" +
         std::to_string(r.silver.annotation_count()) + " blank=" + std::to_string(r.blank_images) +
         " capped=" + std::to_string(r.capped_images));
  if (r.warnings) log_kv("warning=empty_silver_set images=0");
  return "silver_images=" + std::to_string(r.silver.size()) + " warnings=" + std::to_string(r.warnings);
}

std::string run_train_classifiers(const RunConfig& c, const fs::path& gold_dir, const fs::path& out) {
  const Dataset gold = open_split(gold_dir, Role::Gold);
  check_classes(gold, c);
  ClassifierTrainConfig cc = c.pipeline.classifiers;
  cc.seed = derive_seed(c.pipeline.seed, "classifiers");
  const auto ens = train_classifiers(gold, c.pipeline.crop_size, cc);
  std::string acc;
  for (std::size_t k = 0; k < ens.holdout_accuracy.size(); ++k) {
    log_kv("stage=train-classifiers member=" + std::to_string(k) + " holdout_accuracy=" +
           fmt("%.6f", ens.holdout_accuracy[k]));
    acc += (k ? "," : "") + fmt("%.4f", ens.holdout_accuracy[k]);
  }
  save_checkpoint(out, ensemble_checkpoint(ens));
  return "holdout_accuracy=" + acc;
}

std::string run_score(const RunConfig& c, const fs::path& silver_dir, const std::string& clf_path,
                      const std::string& combiner_name, const fs::path& out) {
  const Dataset silver = open_split(silver_dir, Role::Silver);
  check_classes(silver, c);
  const ScoreCombiner comb = ScoreCombiner::parse(combiner_name.empty() ? c.pipeline.combiner.name() : combiner_name);
  std::optional<ClassifierEnsemble> ens;
  if (!clf_path.empty()) ens = ensemble_from_checkpoint(load_checkpoint(clf_path));
  std::vector<ScoreRecord> audit;
  const Dataset scored = attach_scores(silver, ens ? &*ens : nullptr, comb, &audit);
  write_dataset(scored, out);
  write_text_file(out / "scores.csv", scores_csv(audit, comb));
  log_kv("stage=score combiner=" + comb.name() + " boxes=" + std::to_string(audit.size()) +
         " mean_alpha=" + fmt("%.6f", mean_alpha(scored)));
  return "combiner=" + comb.name() + " mean_alpha=" + fmt("%.6f", mean_alpha(scored));
}

std::string run_train_student(const RunConfig& c, const fs::path& silver_dir, const std::string& init_s,
                              const std::string& teacher_path, const fs::path& out) {
  const Dataset silver = open_split(silver_dir, Role::Silver);
  check_classes(silver, c);
  const StudentInit init = init_s.empty() ? c.pipeline.init : parse_init(init_s);
  std::optional<Detector<float>> teacher;
  if (!teacher_path.empty()) teacher = load_detector(teacher_path, detector_config(c));
  DetectorTrainConfig sc = c.pipeline.student;
  sc.seed = derive_seed(c.pipeline.seed, "student");
  sc.alpha_weighting = true;
  const auto r = train_student(silver, init, teacher ? &*teacher : nullptr, detector_config(c), sc);
  for (std::size_t e = 0; e < r.history.size(); ++e) {
    log_kv("stage=train-student epoch=" + std::to_string(e) + " loss=" + fmt("%.6f", r.history[e].total));
  }
  save_detector(out, r.model);
  write_text_file(out.string() + ".loss.csv", loss_history_csv(r.history));
  return std::string("init=") + init_name(init) + " epochs=" + std::to_string(r.history.size());
}

std::string run_eval(const RunConfig& c, const fs::path& model_path, const fs::path& test_dir, const fs::path& out) {
  const Dataset test = open_split(test_dir, Role::Test);
  check_classes(test, c);
  const auto model = load_detector(model_path, detector_config(c));
  const auto rep = evaluate(model, test, c.eval_iou_threshold);
  write_text_file(out, report_csv(rep, test.class_names));
  for (std::size_t k = 0; k < rep.per_class_ap.size(); ++k) {
    log_kv("stage=eval class=" + test.class_names[k] + " ap=" + fmt("%.6f", rep.per_class_ap[k]));
  }
  return "mAP=" + fmt("%.6f", rep.map);
}

std::string run_sweep(RunConfig c, const fs::path& out, bool audit, std::optional<int> jobs) {
  c.sweep.audit = audit;
  if (jobs) c.jobs = *jobs;
  validate(c);
  fs::create_directories(out);
  const auto table = run_experiment(c.sweep, c.pipeline, c.jobs, nullptr, log_kv);
  const std::string csv = result_csv(table);
  write_text_file(out / "results.csv", csv);
  std::string errors;
  std::size_t failed = 0;
  for (const auto& r : table.rows) {
    if (r.ok) continue;
    ++failed;
    errors += std::to_string(r.gold_size) + "," + r.combiner + "," + r.init + "," + std::to_string(r.seed) + ": " + r.error + "\n";
  }
  if (failed) write_text_file(out / "errors.txt", errors);
  const std::string cfg = serialize_run_config(c);
  std::string manifest = "version = " SLW_VERSION "\n";
  manifest += "config_hash = " + git_blob_hash(cfg) + "\n";
  manifest += "results_hash = " + git_blob_hash(csv) + "\n";
  manifest += "rows = " + std::to_string(table.rows.size()) + "\n";
  manifest += "failed_rows = " + std::to_string(failed) + "\n";
  manifest += "audit = " + std::string(audit ? "true" : "false") + "\n";
  manifest += "\n" + cfg;
  write_text_file(out / "manifest.txt", manifest);
  return "rows=" + std::to_string(table.rows.size()) + " failed=" + std::to_string(failed);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised detection with score-weighted pseudo-labels"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("slw " SLW_VERSION " (rev " SLW_GIT_REV ", " SLW_BUILD_TYPE ")"));

  Common common;
  std::string out, data, teacher, unlabeled, gold, silver, classifiers, combiner, init, model, test, grid;
  bool audit = false, print_config = false;
  std::optional<int> jobs;

  auto* gen = app.add_subcommand("gen-data", "render gold, unlabeled and test splits");
  add_common(gen, common);
  gen->add_option("--out", out, "output directory")->required();
  gen->add_flag("--print-config", print_config, "write the effective config with every default to stdout and exit");

  auto* tt = app.add_subcommand("train-teacher", "train the teacher on gold");
  add_common(tt, common);
  tt->add_option("--data", data, "gen-data root or gold split")->required();
  tt->add_option("--out", out, "teacher checkpoint")->required();

  auto* pl = app.add_subcommand("pseudolabel", "label the unlabeled pool with the teacher");
  add_common(pl, common);
  pl->add_option("--teacher", teacher, "teacher checkpoint")->required();
  pl->add_option("--unlabeled", unlabeled, "gen-data root or unlabeled split")->required();
  pl->add_option("--out", out, "silver split directory")->required();

  auto* tc = app.add_subcommand("train-classifiers", "train the scoring ensemble on gold crops");
  add_common(tc, common);
  tc->add_option("--gold", gold, "gen-data root or gold split")->required();
  tc->add_option("--out", out, "ensemble checkpoint")->required();

  auto* sc = app.add_subcommand("score", "attach alpha to every silver box");
  add_common(sc, common);
  sc->add_option("--silver", silver, "silver split directory")->required();
  sc->add_option("--classifiers", classifiers, "ensemble checkpoint");
  sc->add_option("--combiner", combiner, "const1 | clf0..clf3 | avg | max | maxdet | det");
  sc->add_option("--out", out, "scored silver directory")->required();

  auto* ts = app.add_subcommand("train-student", "train the student on scored silver");
  add_common(ts, common);
  ts->add_option("--silver", silver, "scored silver directory")->required();
  ts->add_option("--init", init, "reinit | bootstrap");
  ts->add_option("--teacher", teacher, "teacher checkpoint (bootstrap)");
  ts->add_option("--out", out, "student checkpoint")->required();

  auto* ev = app.add_subcommand("eval", "score a detector on the test split");
  add_common(ev, common);
  ev->add_option("--model", model, "detector checkpoint")->required();
  ev->add_option("--test", test, "gen-data root or test split")->required();
  ev->add_option("--out", out, "report CSV")->required();

  auto* sw = app.add_subcommand("sweep", "run the experiment grid");
  add_common(sw, common);
  sw->add_option("--grid", grid, "config file holding the sweep.* axes")->required();
  sw->add_option("--out", out, "output directory")->required();
  sw->add_flag("--audit", audit, "add silver-vs-truth analysis columns");
  sw->add_option("--jobs", jobs, "worker threads, overrides sweep.jobs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    if (e.get_exit_code() != 0) std::cout << "status=error message=\"invalid arguments\"\n";
    return code == 0 ? 0 : 1;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    std::string summary;
    if (cmd == "sweep") {
      common.config = grid;
    }
    const RunConfig c = common.load();
    log_kv("command=" + cmd + " seed=" + std::to_string(c.pipeline.seed));
    if (cmd == "gen-data") {
      if (print_config) {
        std::cout << serialize_run_config(c);
        return 0;
      }
      summary = run_gen_data(c, out);
    } else if (cmd == "train-teacher") {
      summary = run_train_teacher(c, data, out);
    } else if (cmd == "pseudolabel") {
      summary = run_pseudolabel(c, teacher, unlabeled, out);
    } else if (cmd == "train-classifiers") {
      summary = run_train_classifiers(c, gold, out);
    } else if (cmd == "score") {
      summary = run_score(c, silver, classifiers, combiner, out);
    } else if (cmd == "train-student") {
      summary = run_train_student(c, silver, init, teacher, out);
    } else if (cmd == "eval") {
      summary = run_eval(c, model, test, out);
    } else if (cmd == "sweep") {
      summary = run_sweep(c, out, audit, jobs);
    }
    std::cout << "status=ok command=" << cmd << " " << summary << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error=\"" << e.what() << "\"\n";
    std::cout << "status=error command=" << cmd << "\n";
    return 1;
  }
}
