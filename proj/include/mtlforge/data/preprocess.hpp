#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtlforge/data/series.hpp"
#include "mtlforge/error.hpp"

namespace mtl {

/// Keep only timestamps present in every series; row order is preserved.
inline std::vector<RawSeries> merge_on_timestamp(const std::vector<RawSeries>& series) {
  if (series.empty()) throw DataError("merge: no series given");
  for (const auto& s : series) s.validate();
  std::vector<Timestamp> common = series.front().timestamps;
  for (std::size_t k = 1; k < series.size(); ++k) {
    std::vector<Timestamp> next;
    std::set_intersection(common.begin(), common.end(), series[k].timestamps.begin(), series[k].timestamps.end(),
                          std::back_inserter(next));
    common.swap(next);
  }
  if (common.empty()) throw DataError("merge: series share no timestamps");
  std::vector<RawSeries> out;
  for (const auto& s : series) {
    RawSeries r;
    r.task_name = s.task_name;
    r.feature_names = s.feature_names;
    std::size_t c = 0;
    std::vector<double> row(s.n_features());
    for (std::size_t i = 0; i < s.rows() && c < common.size(); ++i) {
      if (s.timestamps[i] != common[c]) continue;
      for (std::size_t j = 0; j < row.size(); ++j) row[j] = s.feature(i, j);
      r.push_row(s.timestamps[i], row, s.target[i]);
      ++c;
    }
    out.push_back(std::move(r));
  }
  return out;
}

/// Linear upsampling of features by `factor` between consecutive stamps.
/// The final stamp contributes only itself, so H rows become factor*(H-1)+1.
///
/// Targets come from `target_source` at each new stamp when given (it must
/// cover every stamp); otherwise they are interpolated like the features.
inline RawSeries interpolate_features(const RawSeries& s, std::size_t factor = 4,
                                      const RawSeries* target_source = nullptr) {
  s.validate();
  require(factor >= 1, "interpolate: factor must be >= 1");
  if (s.rows() < 2) throw DataError(s.task_name + ": interpolation needs at least two rows");
  const Timestamp step = s.timestamps[1] - s.timestamps[0];
  for (std::size_t i = 1; i < s.rows(); ++i)
    if (s.timestamps[i] - s.timestamps[i - 1] != step)
      throw DataError(s.task_name + ": non-uniform spacing at " + format_timestamp(s.timestamps[i]));
  if (step % static_cast<Timestamp>(factor) != 0)
    throw DataError(s.task_name + ": spacing does not split into " + std::to_string(factor) + " whole-second parts");
  const Timestamp sub = step / static_cast<Timestamp>(factor);

  std::unordered_map<Timestamp, double> lookup;
  if (target_source) {
    target_source->validate();
    for (std::size_t i = 0; i < target_source->rows(); ++i)
      lookup.emplace(target_source->timestamps[i], target_source->target[i]);
  }
  auto target_at = [&](Timestamp ts, double interpolated) {
    if (!target_source) return interpolated;
    auto it = lookup.find(ts);
    if (it == lookup.end()) throw DataError(s.task_name + ": no target value for " + format_timestamp(ts));
    return it->second;
  };

  RawSeries out;
  out.task_name = s.task_name;
  out.feature_names = s.feature_names;
  const std::size_t d = s.n_features();
  std::vector<double> row(d);
  for (std::size_t i = 0; i + 1 < s.rows(); ++i)
    for (std::size_t k = 0; k < factor; ++k) {
      const double w = static_cast<double>(k) / static_cast<double>(factor);
      for (std::size_t j = 0; j < d; ++j) row[j] = (1.0 - w) * s.feature(i, j) + w * s.feature(i + 1, j);
      const Timestamp ts = s.timestamps[i] + static_cast<Timestamp>(k) * sub;
      out.push_row(ts, row, target_at(ts, (1.0 - w) * s.target[i] + w * s.target[i + 1]));
    }
  const std::size_t last = s.rows() - 1;
  for (std::size_t j = 0; j < d; ++j) row[j] = s.feature(last, j);
  out.push_row(s.timestamps[last], row, target_at(s.timestamps[last], s.target[last]));
  return out;
}

/// Append `<name>_past` and `<name>_future` columns holding the feature at
/// t - shift and t + shift. Rows missing either neighbour are dropped.
inline RawSeries add_time_shifts(const RawSeries& s, const std::vector<std::string>& names,
                                 Timestamp shift = kSecondsPerHour) {
  s.validate();
  require(shift > 0, "time shift must be positive");
  std::vector<std::size_t> cols;
  for (const auto& n : names) cols.push_back(s.feature_index(n));
  std::unordered_map<Timestamp, std::size_t> at;
  for (std::size_t i = 0; i < s.rows(); ++i) at.emplace(s.timestamps[i], i);

  RawSeries out;
  out.task_name = s.task_name;
  out.feature_names = s.feature_names;
  for (const auto& n : names) {
    out.feature_names.push_back(n + "_past");
    out.feature_names.push_back(n + "_future");
  }
  std::vector<double> row;
  for (std::size_t i = 0; i < s.rows(); ++i) {
    auto past = at.find(s.timestamps[i] - shift);
    auto future = at.find(s.timestamps[i] + shift);
    if (past == at.end() || future == at.end()) continue;
    row.assign(s.features.begin() + static_cast<std::ptrdiff_t>(i * s.n_features()),
               s.features.begin() + static_cast<std::ptrdiff_t>((i + 1) * s.n_features()));
    for (auto c : cols) {
      row.push_back(s.feature(past->second, c));
      row.push_back(s.feature(future->second, c));
    }
    out.push_row(s.timestamps[i], row, s.target[i]);
  }
  if (out.rows() == 0) throw DataError(s.task_name + ": no rows left after time shifting");
  return out;
}

}  // namespace mtl
