#pragma once

#include <charconv>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "slw/numerics/tensor.hpp"

namespace slw::csv {

/// Plain comma split; the files written here never quote fields.
inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string l;
  while (std::getline(is, l)) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

inline std::string where(std::size_t line) { return "csv line " + std::to_string(line) + ": "; }

inline double to_double(const std::string& s, std::size_t line) {
  if (s == "nan") return std::nan("");
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw Error(where(line) + "bad number '" + s + "'");
  return v;
}

template <class I>
I to_int(const std::string& s, std::size_t line) {
  I v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw Error(where(line) + "bad integer '" + s + "'");
  return v;
}

/// Checks the header and returns the data rows, each with `width` fields.
inline std::vector<std::vector<std::string>> rows(const std::string& text, const std::string& header,
                                                  std::size_t width) {
  const auto ls = lines(text);
  if (ls.empty() || ls[0] != header) throw Error("csv: expected header '" + header + "'");
  std::vector<std::vector<std::string>> out;
  for (std::size_t i = 1; i < ls.size(); ++i) {
    auto f = split(ls[i]);
    if (f.size() != width) {
      throw Error(where(i + 1) + "expected " + std::to_string(width) + " fields, got " + std::to_string(f.size()));
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace slw::csv
