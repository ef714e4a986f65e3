#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "slw/numerics/rng.hpp"
#include "slw/synthdata/annotation.hpp"
#include "slw/synthdata/image.hpp"
#include "slw/synthdata/scene.hpp"

namespace slw {

enum class Role { Gold, Unlabeled, Silver, Test };

inline const char* role_name(Role r) {
  switch (r) {
    case Role::Gold: return "gold";
    case Role::Unlabeled: return "unlabeled";
    case Role::Silver: return "silver";
    case Role::Test: return "test";
  }
  return "?";
}

inline Role parse_role(const std::string& s) {
  if (s == "gold") return Role::Gold;
  if (s == "unlabeled") return Role::Unlabeled;
  if (s == "silver") return Role::Silver;
  if (s == "test") return Role::Test;
  throw Error("unknown dataset role: " + s);
}

/// One image with its labels. Gold/Test items use `boxes`, Silver items use
/// `scored`, Unlabeled items carry neither.
struct DatasetItem {
  std::string name;
  std::uint64_t seed = 0;
  Image image;
  std::vector<Annotation> boxes;
  std::vector<ScoredAnnotation> scored;

  friend bool operator==(const DatasetItem&, const DatasetItem&) = default;
};

struct Dataset {
  Role role = Role::Gold;
  std::vector<std::string> class_names;
  std::uint64_t seed = 0;
  std::vector<DatasetItem> items;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::size_t size() const { return items.size(); }

  std::size_t annotation_count() const {
    std::size_t n = 0;
    for (const auto& it : items) n += it.boxes.size() + it.scored.size();
    return n;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Throws if the role-specific invariants are violated.
inline void validate(const Dataset& d) {
  const int c = d.num_classes();
  for (const auto& it : d.items) {
    switch (d.role) {
      case Role::Unlabeled:
        if (!it.boxes.empty() || !it.scored.empty()) throw Error("unlabeled item " + it.name + " carries annotations");
        break;
      case Role::Silver:
        if (!it.boxes.empty()) throw Error("silver item " + it.name + " carries unscored boxes");
        if (it.scored.empty()) throw Error("silver item " + it.name + " has no annotations");
        for (const auto& s : it.scored) {
          validate(s.box, c);
          if (!(s.alpha >= 0.0 && s.alpha <= 1.0)) throw Error("silver item " + it.name + ": alpha outside [0,1]");
          if (!(s.det_conf >= 0.0 && s.det_conf <= 1.0)) throw Error("silver item " + it.name + ": det_conf outside [0,1]");
        }
        break;
      case Role::Gold:
      case Role::Test:
        if (!it.scored.empty()) throw Error(std::string(role_name(d.role)) + " item " + it.name + " carries scores");
        for (const auto& a : it.boxes) validate(a, c);
        break;
    }
  }
}

struct SplitSizes {
  std::size_t gold = 64;
  std::size_t unlabeled = 512;
  std::size_t test = 128;
};

/// The generated splits. Ground truth of the unlabeled pool is kept apart from
/// the Unlabeled dataset so that it cannot reach a training path.
struct Splits {
  Dataset gold;
  Dataset unlabeled;
  Dataset test;
  std::vector<std::vector<Annotation>> unlabeled_truth;
};

inline std::string item_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%06zu", index);
  return buf;
}

namespace detail {

inline Dataset render_split(const SceneSpec& spec, Role role, std::size_t count, std::uint64_t seed,
                            std::vector<std::vector<Annotation>>* truth) {
  Dataset d;
  d.role = role;
  d.class_names = spec.class_names();
  d.seed = seed;
  const std::uint64_t stream = derive_seed(seed, role_name(role));
  d.items.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    DatasetItem it;
    it.name = item_name(i);
    it.seed = derive_seed(stream, static_cast<std::uint64_t>(i));
    RenderedScene scene = render_scene(spec, it.seed);
    it.image = std::move(scene.image);
    if (truth) {
      truth->push_back(std::move(scene.annotations));
    } else {
      it.boxes = std::move(scene.annotations);
    }
    d.items.push_back(std::move(it));
  }
  return d;
}

}  // namespace detail

/// Renders Gold, Unlabeled and Test splits from disjoint seed streams.
inline Splits generate_splits(const SceneSpec& spec, const SplitSizes& sizes, std::uint64_t seed) {
  validate(spec);
  if (sizes.gold < 1 || sizes.unlabeled < 1 || sizes.test < 1) throw Error("generate_splits: sizes must be >= 1");
  Splits s;
  s.gold = detail::render_split(spec, Role::Gold, sizes.gold, seed, nullptr);
  s.unlabeled = detail::render_split(spec, Role::Unlabeled, sizes.unlabeled, seed, &s.unlabeled_truth);
  s.test = detail::render_split(spec, Role::Test, sizes.test, seed, nullptr);
  return s;
}

// ---------------------------------------------------------------------------
// Files: <dir>/manifest.txt, <dir>/<name>.png, <dir>/<name>.txt (labels),
// and for the unlabeled split the hidden sidecar <dir>/<name>.truth.

class DatasetFormatError : public Error {
 public:
  DatasetFormatError(const std::filesystem::path& file, std::size_t line, const std::string& what)
      : Error(file.string() + ":" + std::to_string(line) + ": " + what) {}
};

inline std::string format_annotation(const Annotation& a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%d %.6f %.6f %.6f %.6f", a.class_id, a.cx, a.cy, a.w, a.h);
  return buf;
}

inline std::string format_annotation(const ScoredAnnotation& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, " %.6f %.6f", s.alpha, s.det_conf);
  return format_annotation(s.box) + buf;
}

/// Parses one annotation line. `scored` selects the 7-column silver layout.
inline ScoredAnnotation parse_annotation_line(const std::string& line, bool scored, int num_classes,
                                              const std::filesystem::path& file, std::size_t lineno) {
  std::istringstream is(line);
  ScoredAnnotation s;
  std::string extra;
  if (!(is >> s.box.class_id >> s.box.cx >> s.box.cy >> s.box.w >> s.box.h)) {
    throw DatasetFormatError(file, lineno, "expected 'class_id cx cy w h'");
  }
  if (scored && !(is >> s.alpha >> s.det_conf)) {
    throw DatasetFormatError(file, lineno, "silver line needs alpha and det_conf columns");
  }
  if (is >> extra) throw DatasetFormatError(file, lineno, "unexpected trailing field '" + extra + "'");
  if (auto p = annotation_problem(s.box, num_classes); !p.empty()) throw DatasetFormatError(file, lineno, p);
  if (scored && !(s.alpha >= 0.0 && s.alpha <= 1.0 && s.det_conf >= 0.0 && s.det_conf <= 1.0)) {
    throw DatasetFormatError(file, lineno, "alpha and det_conf must lie in [0,1]");
  }
  return s;
}

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write " + p.string());
  os << text;
  if (!os) throw Error("write failed: " + p.string());
}

inline std::vector<std::string> read_lines(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw Error("cannot read " + p.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::string join_annotations(const std::vector<Annotation>& v) {
  std::string s;
  for (const auto& a : v) s += format_annotation(a) + "\n";
  return s;
}

}  // namespace detail

inline void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  validate(d);
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  manifest << "role " << role_name(d.role) << "\n";
  manifest << "seed " << d.seed << "\n";
  manifest << "classes";
  for (const auto& c : d.class_names) manifest << ' ' << c;
  manifest << "\n";
  manifest << "items " << d.items.size() << "\n";
  for (const auto& it : d.items) {
    manifest << "image " << it.name << ' ' << it.seed << "\n";
    write_png(dir / (it.name + ".png"), it.image);
    if (d.role == Role::Unlabeled) continue;
    std::string labels;
    if (d.role == Role::Silver) {
      for (const auto& s : it.scored) labels += format_annotation(s) + "\n";
    } else {
      labels = detail::join_annotations(it.boxes);
    }
    detail::write_text(dir / (it.name + ".txt"), labels);
  }
  detail::write_text(dir / "manifest.txt", manifest.str());
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  const auto mpath = dir / "manifest.txt";
  const auto lines = detail::read_lines(mpath);
  Dataset d;
  std::size_t expected = 0;
  bool have_role = false;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::istringstream is(lines[i]);
    std::string key;
    is >> key;
    if (key == "role") {
      std::string r;
      is >> r;
      d.role = parse_role(r);
      have_role = true;
    } else if (key == "seed") {
      if (!(is >> d.seed)) throw DatasetFormatError(mpath, i + 1, "bad seed");
    } else if (key == "classes") {
      std::string c;
      while (is >> c) d.class_names.push_back(c);
    } else if (key == "items") {
      if (!(is >> expected)) throw DatasetFormatError(mpath, i + 1, "bad item count");
    } else if (key == "image") {
      DatasetItem it;
      if (!(is >> it.name >> it.seed)) throw DatasetFormatError(mpath, i + 1, "expected 'image <name> <seed>'");
      d.items.push_back(std::move(it));
    } else {
      throw DatasetFormatError(mpath, i + 1, "unknown manifest key '" + key + "'");
    }
  }
  if (!have_role) throw DatasetFormatError(mpath, 1, "missing role");
  if (d.class_names.empty()) throw DatasetFormatError(mpath, 1, "missing classes");
  if (expected != d.items.size()) throw DatasetFormatError(mpath, 1, "item count does not match image list");
  for (auto& it : d.items) {
    it.image = read_png(dir / (it.name + ".png"));
    if (d.role == Role::Unlabeled) continue;
    const auto lpath = dir / (it.name + ".txt");
    const auto ann_lines = detail::read_lines(lpath);
    for (std::size_t i = 0; i < ann_lines.size(); ++i) {
      if (ann_lines[i].find_first_not_of(" \t") == std::string::npos) continue;
      const bool scored = d.role == Role::Silver;
      auto s = parse_annotation_line(ann_lines[i], scored, d.num_classes(), lpath, i + 1);
      if (scored) {
        it.scored.push_back(s);
      } else {
        it.boxes.push_back(s.box);
      }
    }
  }
  validate(d);
  return d;
}

/// Writes the unlabeled split's ground truth as <name>.truth sidecars.
inline void write_hidden_truth(const Dataset& unlabeled, const std::vector<std::vector<Annotation>>& truth,
                               const std::filesystem::path& dir) {
  if (truth.size() != unlabeled.items.size()) throw Error("hidden truth does not match unlabeled items");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    detail::write_text(dir / (unlabeled.items[i].name + ".truth"), detail::join_annotations(truth[i]));
  }
}

/// Audit-only reader for the sidecars written by write_hidden_truth.
inline std::vector<std::vector<Annotation>> read_hidden_truth(const Dataset& unlabeled,
                                                              const std::filesystem::path& dir) {
  std::vector<std::vector<Annotation>> out;
  for (const auto& it : unlabeled.items) {
    const auto p = dir / (it.name + ".truth");
    const auto lines = detail::read_lines(p);
    std::vector<Annotation> boxes;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      if (lines[i].empty()) continue;
      boxes.push_back(parse_annotation_line(lines[i], false, unlabeled.num_classes(), p, i + 1).box);
    }
    out.push_back(std::move(boxes));
  }
  return out;
}

}  // namespace slw
