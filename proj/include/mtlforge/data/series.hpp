#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtlforge/data/time.hpp"
#include "mtlforge/error.hpp"

namespace mtl {

/// One task's time series before preprocessing.
struct RawSeries {
  std::string task_name;
  std::vector<std::string> feature_names;
  std::vector<Timestamp> timestamps;
  std::vector<double> features;  // row-major [rows, n_features]
  std::vector<double> target;

  std::size_t rows() const { return timestamps.size(); }
  std::size_t n_features() const { return feature_names.size(); }
  double feature(std::size_t row, std::size_t col) const { return features[row * n_features() + col]; }

  std::size_t feature_index(std::string_view name) const {
    for (std::size_t j = 0; j < feature_names.size(); ++j)
      if (feature_names[j] == name) return j;
    throw DataError(task_name + ": unknown feature '" + std::string(name) + "'");
  }

  void push_row(Timestamp ts, const std::vector<double>& f, double y) {
    timestamps.push_back(ts);
    features.insert(features.end(), f.begin(), f.end());
    target.push_back(y);
  }

  /// Strictly increasing timestamps and consistent column counts.
  void validate() const {
    if (features.size() != rows() * n_features() || target.size() != rows())
      throw DataError(task_name + ": inconsistent column lengths");
    for (std::size_t i = 1; i < rows(); ++i) {
      if (timestamps[i] == timestamps[i - 1])
        throw DataError(task_name + ": duplicate timestamp " + format_timestamp(timestamps[i]));
      if (timestamps[i] < timestamps[i - 1])
        throw DataError(task_name + ": timestamps not increasing at " + format_timestamp(timestamps[i]));
    }
  }

  friend bool operator==(const RawSeries&, const RawSeries&) = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i)
    if (i == line.size() || line[i] == ',') {
      cells.push_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  return cells;
}

inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

/// Parse `timestamp,<features...>,target` CSV text. `target` may sit in any
/// column after `timestamp`; the remaining columns are features in file order.
/// Row numbers in errors are 1-based file lines.
inline RawSeries parse_csv(std::string_view text, std::string task_name) {
  RawSeries s;
  s.task_name = std::move(task_name);
  const std::string& who = s.task_name;
  std::size_t line_no = 0, pos = 0;
  std::size_t target_col = 0, n_cols = 0;
  bool have_header = false;
  std::vector<double> row;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.remove_prefix(3);
    if (detail::trim(line).empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto cells = detail::split_csv_line(line);
    if (!have_header) {
      if (cells.front() != "timestamp") throw DataError(who + ": first header column must be 'timestamp'");
      bool found = false;
      for (std::size_t j = 1; j < cells.size(); ++j) {
        if (cells[j].empty()) throw DataError(who + ": empty column name in header");
        if (cells[j] == "target") {
          if (found) throw DataError(who + ": duplicate 'target' column");
          target_col = j;
          found = true;
        } else {
          s.feature_names.emplace_back(cells[j]);
        }
      }
      if (!found) throw DataError(who + ": header has no 'target' column");
      n_cols = cells.size();
      have_header = true;
      continue;
    }
    const std::string where = who + " row " + std::to_string(line_no);
    if (cells.size() != n_cols)
      throw DataError(where + ": expected " + std::to_string(n_cols) + " cells, found " + std::to_string(cells.size()));
    Timestamp ts;
    try {
      ts = parse_timestamp(cells[0]);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
    if (!s.timestamps.empty()) {
      if (ts == s.timestamps.back())
        throw DataError(where + ": duplicate timestamp " + std::string(cells[0]));
      if (ts < s.timestamps.back()) throw DataError(where + ": timestamp goes backwards");
    }
    row.clear();
    double y = 0.0;
    for (std::size_t j = 1; j < cells.size(); ++j) {
      double v;
      if (!detail::parse_double(cells[j], v))
        throw DataError(where + ": non-numeric value '" + std::string(cells[j]) + "' in column " + std::to_string(j + 1));
      if (j == target_col)
        y = v;
      else
        row.push_back(v);
    }
    s.push_row(ts, row, y);
    if (end == text.size()) break;
  }
  if (!have_header) throw DataError(who + ": empty file");
  if (s.rows() == 0) throw DataError(who + ": no data rows");
  return s;
}

/// Task name is the file stem.
inline RawSeries load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_csv(text, path.stem().string());
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace mtl
