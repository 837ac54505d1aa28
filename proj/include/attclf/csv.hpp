#pragma once

// Minimal CSV helpers shared by the file formats of every module. Numbers are
// written with %.17g so a write/read cycle reproduces doubles bit for bit.

#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "attclf/errors.hpp"

namespace attclf::csv {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

/// Writes one comma-separated row.
template <typename... Ts>
void row(std::ostream& os, const Ts&... cells) {
  bool first = true;
  auto put = [&](const auto& c) {
    if (!first) os << ',';
    first = false;
    if constexpr (std::is_floating_point_v<std::decay_t<decltype(c)>>) {
      os << fmt(c);
    } else {
      os << c;
    }
  };
  (put(cells), ...);
  os << '\n';
}

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? line.size() - start : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double to_double(const std::string& s, const std::string& field = "csv") {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ValidationError(field, "cannot parse '" + s + "' as a number");
  }
}

/// A parsed CSV table: leading '#' comment lines, one header row, data rows.
struct Table {
  std::vector<std::string> comments;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    throw ValidationError(name, "column missing from CSV header");
  }
};

inline Table read(std::istream& is) {
  Table t;
  std::string line;
  bool have_header = false;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (!have_header) t.comments.push_back(line.substr(1));
      continue;
    }
    auto cells = split(line);
    if (!have_header) {
      t.header = std::move(cells);
      have_header = true;
    } else {
      if (cells.size() != t.header.size()) {
        throw ValidationError("csv", "row has " + std::to_string(cells.size()) + " cells, header has " +
                                         std::to_string(t.header.size()));
      }
      t.rows.push_back(std::move(cells));
    }
  }
  if (!have_header) throw ValidationError("csv", "missing header row");
  return t;
}

/// Looks up `key=value` tokens inside the comment lines.
inline std::string comment_value(const Table& t, const std::string& key, const std::string& fallback = "") {
  const std::string needle = key + "=";
  for (const auto& c : t.comments) {
    std::istringstream ss(c);
    std::string tok;
    while (ss >> tok) {
      if (tok.rfind(needle, 0) == 0) return tok.substr(needle.size());
    }
  }
  return fallback;
}

}  // namespace attclf::csv
