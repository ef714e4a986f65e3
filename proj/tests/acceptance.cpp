// Acceptance suite. `acceptance [N ...]` runs the listed criteria (all when
// none are given), prints one line per criterion and exits non-zero if any
// fails. Progress and per-seed numbers go to stderr.

#include <chrono>
#include <cstdio>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "cli_run.hpp"
#include "oracles.hpp"
#include "slw/cli/run_config.hpp"
#include "slw/detector/io.hpp"
#include "slw/pipeline/experiment.hpp"

using namespace slw;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

void log(const std::string& s) { std::cerr << s << "\n"; }

std::string checkpoint_bytes(const Detector<float>& d) {
  std::ostringstream os;
  write_checkpoint(os, detector_checkpoint(d));
  return os.str();
}

int worker_count() { return static_cast<int>(std::max(1u, std::thread::hardware_concurrency())); }

// ---------------------------------------------------------------------------
// 1

Outcome gradients() {
  Rng rng(101);
  double worst = 0.0;
  std::string worst_name;
  std::size_t ops = 0;
  for (const auto& c : oracle::op_gradient_cases()) {
    const double e = oracle::worst_gradient_error(c, rng, 20);
    log("op=" + std::string(c.name) + " max_rel=" + fmt("%.3g", e));
    if (e >= worst) {
      worst = e;
      worst_name = c.name;
    }
    ++ops;
  }
  // the full loss, through the head activations, on two grid shapes
  for (auto [S, B, C] : {std::tuple{2, 1, 2}, {4, 2, 5}}) {
    DetectorConfig c;
    c.grid = S;
    c.boxes_per_cell = B;
    c.num_classes = C;
    c.input_size = 16 * S;
    double w = 0.0;
    for (int instance = 0; instance < 20; ++instance) {
      Tensor<double> raw = oracle::random_tensor(
          Shape{static_cast<std::size_t>(c.channels()), static_cast<std::size_t>(S), static_cast<std::size_t>(S)}, rng,
          -2.0, 2.0);
      std::vector<Annotation> gts;
      for (std::size_t k = 1 + rng.index(3); k > 0; --k) gts.push_back(oracle::random_box(rng, C, 0.05, 0.6));
      const auto t = assign_targets(gts, c);
      w = std::max(w, oracle::check_gradient({&raw}, [&](Tape<double>& tape, const std::vector<Var>& v) {
                        return yolo_loss(tape, activate_head(tape, v[0], c), t, c).total;
                      }).max_rel);
    }
    const std::string name = "yolo_loss_S" + std::to_string(S) + "B" + std::to_string(B);
    log("op=" + name + " max_rel=" + fmt("%.3g", w));
    if (w >= worst) {
      worst = w;
      worst_name = name;
    }
    ++ops;
  }
  return {worst < 1e-4, std::to_string(ops) + " checks x 20 instances, worst " + worst_name + " " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------
// 2

Outcome oracles() {
  Rng rng(202);
  std::size_t nms_bad = 0, match_bad = 0;
  double ap_err = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto dets = oracle::random_detections(rng, rng.index(25), 3);
    const double thr = rng.uniform(0.1, 0.9);
    nms_bad += nms(dets, thr) != oracle::nms_reference(dets, thr);
  }
  for (int trial = 0; trial < 1000; ++trial) {
    auto dets = oracle::random_detections(rng, rng.index(12), 2);
    std::stable_sort(dets.begin(), dets.end(),
                     [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
    std::vector<Annotation> gts;
    for (std::size_t k = rng.index(6); k > 0; --k) {
      gts.push_back(rng.uniform() < 0.5 && !dets.empty() ? dets[rng.index(dets.size())].box
                                                          : oracle::random_box(rng, 2, 0.1, 0.4));
    }
    const double thr = rng.uniform(0.1, 0.9);
    match_bad += match_detections(dets, gts, thr) != oracle::match_reference(dets, gts, thr);
  }
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<ScoredFlag> f;
    std::size_t tps = 0;
    for (std::size_t k = rng.index(30); k > 0; --k) {
      const bool tp = rng.uniform() < 0.5;
      tps += tp;
      f.push_back({static_cast<double>(rng.index(8)) / 8.0, tp});
    }
    const std::size_t n_gt = tps + rng.index(4);
    ap_err = std::max(ap_err, std::abs(average_precision(f, n_gt) - oracle::ap_reference(f, n_gt)));
  }
  return {nms_bad == 0 && match_bad == 0 && ap_err < 1e-9,
          "nms mismatches " + std::to_string(nms_bad) + "/1000, match mismatches " + std::to_string(match_bad) +
              "/1000, AP max error " + fmt("%.3g", ap_err)};
}

// ---------------------------------------------------------------------------
// 3

Outcome baseline_identity() {
  PipelineConfig base;
  const std::uint64_t seed = 3;
  const auto s = generate_splits(base.scene, {images_for_per_class(base.scene, 32), 96, 1}, seed);
  DetectorTrainConfig tc = base.teacher;
  tc.seed = derive_seed(seed, "teacher");
  const auto teacher = train_teacher(s.gold, base.detector, tc).model;
  const auto silver = generate_silver(teacher, s.unlabeled, base.silver);
  const auto scored = attach_scores(silver.silver, nullptr, ScoreCombiner::constant1());
  if (scored.annotation_count() == 0) return {false, "teacher produced no silver boxes"};
  std::string detail;
  bool ok = true;
  for (auto init : {StudentInit::Bootstrap, StudentInit::Reinit}) {
    DetectorTrainConfig sc = base.student;
    sc.seed = derive_seed(seed, "student");
    sc.alpha_weighting = true;
    const auto weighted = train_student(scored, init, &teacher, base.detector, sc);
    DetectorTrainConfig plain = sc;
    plain.alpha_weighting = false;
    const auto start = init == StudentInit::Bootstrap ? teacher
                                                      : build_detector<float>(base.detector, derive_seed(sc.seed, "student-init"));
    const auto ref = train_detector(start, scored, plain);
    const bool same_hist = loss_history_csv(weighted.history) == loss_history_csv(ref.history) && weighted.history == ref.history;
    const bool same_ckpt = checkpoint_bytes(weighted.model) == checkpoint_bytes(ref.model);
    ok = ok && same_hist && same_ckpt;
    detail += std::string(detail.empty() ? "" : ", ") + init_name(init) + ": history " + (same_hist ? "identical" : "differs") +
              ", checkpoint " + (same_ckpt ? "identical" : "differs");
  }
  return {ok, detail + " (" + std::to_string(scored.annotation_count()) + " silver boxes, " +
                  std::to_string(base.student.epochs) + " epochs)"};
}

// ---------------------------------------------------------------------------
// 4

Outcome decomposition() {
  DetectorConfig c;
  c.grid = 2;
  c.boxes_per_cell = 1;
  c.num_classes = 3;
  c.input_size = 32;
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    // one box in each of 1..4 distinct cells
    std::vector<int> cells{0, 1, 2, 3};
    rng.shuffle(cells);
    cells.resize(1 + rng.index(4));
    std::vector<Annotation> gts;
    std::vector<double> alphas;
    for (int cell : cells) {
      Annotation a;
      a.class_id = static_cast<int>(rng.index(3));
      a.cx = (cell % 2 + rng.uniform(0.01, 0.99)) / 2.0;
      a.cy = (cell / 2 + rng.uniform(0.01, 0.99)) / 2.0;
      a.w = rng.uniform(0.05, 0.6);
      a.h = rng.uniform(0.05, 0.6);
      gts.push_back(a);
      alphas.push_back(rng.uniform());
    }
    const auto o = oracle::random_output(c, rng);
    const auto t = assign_targets(gts, c, &o, alphas);

    Tensor<double> g = oracle::channel_major(o);
    g.enable_grad();
    Tape<double> tape;
    const auto terms = weighted_loss(tape, tape.parameter(g), t, c, NoobjAlpha::Mean);
    tape.backward(terms.total);
    const double value = tape.value(terms.total)[0];
    const Tensor<double> dg(g.shape(), std::vector<double>(g.grad().begin(), g.grad().end()));
    const auto grad = DetectorOutput::from_channel_major(dg, c);

    const auto d = oracle::decompose(o, gts, c);
    const double a_bar = mean(alphas);
    double expect = a_bar * d.noobj;
    for (std::size_t i = 0; i < gts.size(); ++i) expect += alphas[i] * d.per_box[i];
    worst = std::max(worst, std::abs(value - expect));
    for (std::size_t k = 0; k < d.noobj_grad.size(); ++k) {
      double e = a_bar * d.noobj_grad[k];
      for (std::size_t i = 0; i < gts.size(); ++i) e += alphas[i] * d.per_box_grad[i][k];
      worst = std::max(worst, std::abs(grad.values[k] - e));
    }
  }
  return {worst < 1e-6, "100 triples, max |loss or gradient - oracle| " + fmt("%.3g", worst)};
}

// ---------------------------------------------------------------------------
// 5, 6, 8 share one set of teachers through the cache

struct Bench {
  ExperimentCache cache;
  std::optional<ResultTable> main;      // gold 64/class, unlabeled 8x
  std::optional<ResultTable> fraction;  // gold 64/class at 50%
};

constexpr int kSeeds = 10;

const ResultTable& main_table(Bench& b) {
  if (!b.main) {
    ExperimentGrid g;
    g.gold_sizes = {64};
    g.combiners = {ScoreCombiner::constant1(), ScoreCombiner::max()};
    g.inits = {StudentInit::Bootstrap, StudentInit::Reinit};
    g.repeats = kSeeds;
    b.main = run_experiment(g, PipelineConfig{}, worker_count(), &b.cache, log);
  }
  return *b.main;
}

std::map<std::uint64_t, double> map_by_seed(const ResultTable& t, const std::string& comb, const std::string& init,
                                            std::size_t* failed = nullptr) {
  std::map<std::uint64_t, double> out;
  for (const auto& r : t.rows) {
    if (r.combiner != comb || r.init != init) continue;
    if (!r.ok) {
      log("failed row seed=" + std::to_string(r.seed) + " " + comb + "/" + init + ": " + r.error);
      if (failed) ++*failed;
      out[r.seed] = 0.0;
      continue;
    }
    out[r.seed] = r.map;
  }
  return out;
}

std::vector<double> values(const std::map<std::uint64_t, double>& m) {
  std::vector<double> v;
  for (const auto& [k, x] : m) v.push_back(x);
  return v;
}

Outcome trend_max_vs_const1(Bench& b) {
  const auto& t = main_table(b);
  std::size_t failed = 0;
  const auto c1 = map_by_seed(t, "const1", "bootstrap", &failed);
  const auto mx = map_by_seed(t, "max", "bootstrap", &failed);
  const auto teacher = map_by_seed(t, "none", "gold_only", &failed);
  int wins = 0;
  for (const auto& [seed, m] : mx) {
    log("seed=" + std::to_string(seed) + " teacher=" + fmt("%.4f", teacher.at(seed)) + " const1=" + fmt("%.4f", c1.at(seed)) +
        " max=" + fmt("%.4f", m));
    wins += m > c1.at(seed);
  }
  const double m_c1 = mean(values(c1)), m_max = mean(values(mx)), m_t = mean(values(teacher));
  const bool ok = failed == 0 && mx.size() == kSeeds && m_max >= m_c1 - 0.005 && wins >= 7 && m_t >= 0.25 && m_t <= 0.45;
  return {ok, "mean mAP max " + fmt("%.4f", m_max) + " vs const1 " + fmt("%.4f", m_c1) + ", max wins " +
                  std::to_string(wins) + "/" + std::to_string(mx.size()) + ", mean teacher mAP " + fmt("%.4f", m_t) +
                  (failed ? ", " + std::to_string(failed) + " failed rows" : "")};
}

Outcome trend_bootstrap(Bench& b) {
  const auto& t = main_table(b);
  std::size_t failed = 0;
  std::vector<double> boot, re;
  for (const char* comb : {"const1", "max"}) {
    for (double v : values(map_by_seed(t, comb, "bootstrap", &failed))) boot.push_back(v);
    for (double v : values(map_by_seed(t, comb, "reinit", &failed))) re.push_back(v);
  }
  const double mb = mean(boot), mr = mean(re);
  return {failed == 0 && mb >= mr - 0.01,
          "mean mAP bootstrap " + fmt("%.4f", mb) + " vs reinit " + fmt("%.4f", mr) + " over " + std::to_string(boot.size()) +
              " runs each"};
}

Outcome gold_sweep(Bench& b) {
  ExperimentGrid g;
  g.gold_sizes = {16, 32, 48, 64};
  g.combiners = {ScoreCombiner::max()};
  g.inits = {StudentInit::Bootstrap};
  g.repeats = 5;
  g.unlabeled_per_class = 512;  // one fixed pool, so silver counts are comparable
  const auto t = run_experiment(g, PipelineConfig{}, worker_count(), &b.cache, log);
  std::map<std::pair<int, std::uint64_t>, double> teacher;
  for (const auto& r : t.rows) {
    if (r.combiner == "none" && r.ok) teacher[{r.gold_size, r.seed}] = r.map;
  }
  std::map<int, std::vector<double>> maps, silver;
  std::size_t failed = 0, empty = 0;
  for (const auto& r : t.rows) {
    if (r.combiner != "max") continue;
    double m = r.map;
    if (!r.ok) {
      log("failed row gold=" + std::to_string(r.gold_size) + " seed=" + std::to_string(r.seed) + ": " + r.error);
      // a teacher that emits no silver leaves a bootstrap student at its starting point
      auto it = teacher.find({r.gold_size, r.seed});
      if (r.silver_count == 0 && r.error.find("empty dataset") != std::string::npos && it != teacher.end()) {
        ++empty;
        m = it->second;
      } else {
        ++failed;
        m = 0.0;
      }
    }
    maps[r.gold_size].push_back(m);
    silver[r.gold_size].push_back(static_cast<double>(r.silver_count));
  }
  bool ok = failed == 0;
  std::string detail = std::to_string(empty) + " empty silver sets; gold/class:mAP/silver";
  double prev_map = -1.0, prev_silver = -1.0;
  for (const auto& [gold, v] : maps) {
    const double m = mean(v), s = mean(silver[gold]);
    detail += " " + std::to_string(gold) + ":" + fmt("%.4f", m) + "/" + fmt("%.0f", s);
    if (prev_map >= 0.0 && (m < prev_map - 0.02 || s < prev_silver)) ok = false;
    prev_map = m;
    prev_silver = s;
  }
  return {ok, detail};
}

Outcome half_gold(Bench& b) {
  if (!b.fraction) {
    ExperimentGrid g;
    g.gold_sizes = {64};
    g.gold_fractions = {0.5};
    g.combiners = {ScoreCombiner::constant1(), ScoreCombiner::max()};
    g.inits = {StudentInit::Bootstrap};
    g.repeats = kSeeds;
    b.fraction = run_experiment(g, PipelineConfig{}, worker_count(), &b.cache, log);
  }
  std::size_t failed = 0;
  const auto c1 = map_by_seed(*b.fraction, "const1", "bootstrap", &failed);
  const auto mx = map_by_seed(*b.fraction, "max", "bootstrap", &failed);
  std::vector<double> margin;
  for (const auto& [seed, m] : mx) margin.push_back(m - c1.at(seed));
  const double mm = mean(margin);
  return {failed == 0 && margin.size() == kSeeds && mm > 0.0,
          "mean margin max - const1 " + fmt("%+.4f", mm) + " over " + std::to_string(margin.size()) + " seeds"};
}

// ---------------------------------------------------------------------------
// 9

Outcome determinism() {
  using namespace slw::clitest;
  const auto root = fresh_dir("acceptance-cli");
  const std::string cfg = smoke_config(9);
  const auto a = smoke_sequence(root / "a", cfg);
  const auto b = smoke_sequence(root / "b", cfg);
  std::string problems;
  for (const auto* run : {&a, &b}) {
    for (const auto& s : *run) {
      if (s.result.code != 0) problems += " " + s.command + " exited " + std::to_string(s.result.code) + ";";
    }
  }
  const auto ta = tree_bytes(root / "a"), tb = tree_bytes(root / "b");
  std::size_t differ = 0;
  for (const auto& [path, bytes] : ta) {
    auto it = tb.find(path);
    if (it == tb.end() || it->second != bytes) {
      ++differ;
      problems += " " + path + " differs;";
    }
  }
  if (ta.size() != tb.size()) problems += " file sets differ;";

  // lossless round trips of every text format the run wrote
  const auto d = root / "a";
  std::size_t checked = 0;
  auto same = [&](const std::string& what, const std::string& back, const std::string& orig) {
    ++checked;
    if (back != orig) problems += " " + what + " does not round-trip;";
  };
  try {
    for (const char* f : {"teacher.ckpt.loss.csv", "student.ckpt.loss.csv"}) {
      same(f, loss_history_csv(parse_loss_history_csv(read_file(d / f))), read_file(d / f));
    }
    ScoreCombiner comb;
    const auto rows = parse_scores_csv(read_file(d / "scored/scores.csv"), &comb);
    same("scores.csv", scores_csv(rows, comb), read_file(d / "scored/scores.csv"));
    std::vector<std::string> names;
    const auto rep = parse_report_csv(read_file(d / "report.csv"), &names);
    same("report.csv", report_csv(rep, names), read_file(d / "report.csv"));
    same("results.csv", result_csv(parse_result_csv(read_file(d / "sweep/results.csv"))), read_file(d / "sweep/results.csv"));
    same("config.txt", serialize_run_config(parse_run_config(read_file(d / "data/config.txt"))), read_file(d / "data/config.txt"));
    for (const char* split : {"data/gold", "data/unlabeled", "data/test", "silver", "scored"}) {
      const auto copy = root / "copy" / split;
      const Dataset ds = read_dataset(d / split);
      write_dataset(ds, copy);
      if (ds.role == Role::Unlabeled) write_hidden_truth(ds, read_hidden_truth(ds, d / split), copy);
      if (fs::exists(d / split / "scores.csv")) fs::copy_file(d / split / "scores.csv", copy / "scores.csv");
      ++checked;
      if (tree_bytes(copy) != tree_bytes(d / split)) problems += std::string(" ") + split + " does not round-trip;";
      if (!(read_dataset(copy) == ds)) problems += std::string(" ") + split + " reads back different;";
    }
  } catch (const std::exception& e) {
    problems += std::string(" round trip threw: ") + e.what() + ";";
  }
  fs::remove_all(root);
  return {problems.empty(), std::to_string(ta.size()) + " files compared across two runs (" + std::to_string(differ) +
                                " differ), " + std::to_string(checked) + " formats round-tripped" + problems};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> want;
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n < 1 || n > 9) {
      std::cerr << "usage: acceptance [1-9 ...]\n";
      return 2;
    }
    want.insert(n);
  }
  if (want.empty()) want = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  Bench bench;
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
      {1, {"gradient integrity", gradients}},
      {2, {"oracle equivalence", oracles}},
      {3, {"constant-1 baseline identity", baseline_identity}},
      {4, {"weighted loss decomposition", decomposition}},
      {5, {"max beats constant-1", [&] { return trend_max_vs_const1(bench); }}},
      {6, {"bootstrap vs reinit", [&] { return trend_bootstrap(bench); }}},
      {7, {"gold-size sweep", [&] { return gold_sweep(bench); }}},
      {8, {"feedback at 50% gold", [&] { return half_gold(bench); }}},
      {9, {"determinism and formats", determinism}},
  };
  int failures = 0;
  for (int n : want) {
    const auto& [name, run] = criteria.at(n);
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %-30s %s  %s [%.1fs]\n", n, name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures ? 1 : 0;
}
