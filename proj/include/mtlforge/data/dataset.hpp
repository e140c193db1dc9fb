#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mtlforge/data/preprocess.hpp"
#include "mtlforge/data/series.hpp"
#include "mtlforge/data/time.hpp"
#include "mtlforge/error.hpp"
#include "mtlforge/random.hpp"

namespace mtl {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

struct ColumnStats {
  double mean = 0.0;
  double stdev = 1.0;

  double apply(double x) const { return (x - mean) / stdev; }
  double invert(double z) const { return z * stdev + mean; }
  friend bool operator==(const ColumnStats&, const ColumnStats&) = default;
};

/// z-score parameters estimated on the training rows only.
struct Standardization {
  std::vector<ColumnStats> features;
  ColumnStats target;
  friend bool operator==(const Standardization&, const Standardization&) = default;
};

/// Population mean and standard deviation of `values[rows]`. A constant
/// column gets unit scale so that it standardises to zero.
inline ColumnStats estimate_stats(const std::vector<double>& values, std::size_t stride, std::size_t col,
                                  const std::vector<std::size_t>& rows) {
  double mean = 0.0;
  for (auto r : rows) mean += values[r * stride + col];
  mean /= static_cast<double>(rows.size());
  double ss = 0.0;
  for (auto r : rows) {
    const double d = values[r * stride + col] - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / static_cast<double>(rows.size()));
  return {mean, sd > 0.0 ? sd : 1.0};
}

/// One task after preprocessing: standardized features and target, calendar
/// ids, split membership and the statistics needed to undo the scaling.
struct TaskDataset {
  std::size_t task_id = 0;
  std::string task_name;
  std::vector<std::string> feature_names;
  std::vector<Timestamp> timestamps;
  std::vector<double> features;  // row-major [rows, n_features], standardized
  std::vector<std::array<int, 3>> temporal;
  std::vector<double> target;  // standardized
  std::vector<Split> split;
  Standardization stats;

  std::size_t rows() const { return timestamps.size(); }
  std::size_t n_features() const { return feature_names.size(); }
  double feature(std::size_t row, std::size_t col) const { return features[row * n_features() + col]; }

  std::vector<std::size_t> indices(Split which) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < split.size(); ++i)
      if (split[i] == which) out.push_back(i);
    return out;
  }

  double destandardize_target(double z) const { return stats.target.invert(z); }

  /// Original-unit features of one row.
  std::vector<double> raw_features(std::size_t row) const {
    std::vector<double> out(n_features());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = stats.features[j].invert(feature(row, j));
    return out;
  }

  friend bool operator==(const TaskDataset&, const TaskDataset&) = default;
};

/// Rows stamped before `test_boundary` are shuffled with `seed` and cut into
/// train (round(train_frac * n)) and validation; later rows form the test
/// split. Every task in an experiment is given the same seed, so aligned tasks
/// get identical membership.
inline TaskDataset split_and_standardize(const RawSeries& s, std::size_t task_id, Timestamp test_boundary,
                                         double train_frac, std::uint64_t seed) {
  s.validate();
  require(train_frac > 0.0 && train_frac < 1.0, "split: train fraction must lie in (0,1)");
  TaskDataset d;
  d.task_id = task_id;
  d.task_name = s.task_name;
  d.feature_names = s.feature_names;
  d.timestamps = s.timestamps;
  d.split.assign(s.rows(), Split::test);

  std::vector<std::size_t> before;
  for (std::size_t i = 0; i < s.rows(); ++i)
    if (s.timestamps[i] < test_boundary) before.push_back(i);
  Rng rng(seed);
  rng.shuffle(before.begin(), before.end());
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(before.size())));
  for (std::size_t k = 0; k < before.size(); ++k) d.split[before[k]] = k < n_train ? Split::train : Split::val;

  const auto train = d.indices(Split::train);
  if (train.empty()) throw DataError(s.task_name + ": empty train split");
  if (d.indices(Split::val).empty()) throw DataError(s.task_name + ": empty validation split");
  if (d.indices(Split::test).empty()) throw DataError(s.task_name + ": empty test split");

  const std::size_t D = s.n_features();
  for (std::size_t j = 0; j < D; ++j) d.stats.features.push_back(estimate_stats(s.features, D, j, train));
  d.stats.target = estimate_stats(s.target, 1, 0, train);

  d.features.resize(s.features.size());
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = 0; j < D; ++j) d.features[i * D + j] = d.stats.features[j].apply(s.feature(i, j));
  d.target.resize(s.rows());
  for (std::size_t i = 0; i < s.rows(); ++i) d.target[i] = d.stats.target.apply(s.target[i]);
  for (auto ts : s.timestamps) d.temporal.push_back(extract_temporal(ts).as_array());
  return d;
}

/// Options for the fixed stage order merge -> interpolate -> shift ->
/// calendar ids -> split/standardize.
struct PipelineOptions {
  std::size_t interpolation_factor = 1;  // 1 leaves the series untouched
  std::vector<std::string> shifted_features;
  Timestamp shift_seconds = kSecondsPerHour;
  std::optional<Timestamp> test_boundary;  // unset: the last test_fraction of rows
  double test_fraction = 0.2;
  double train_fraction = 0.8;
  std::uint64_t seed = 0;

  friend bool operator==(const PipelineOptions&, const PipelineOptions&) = default;
};

inline Timestamp boundary_from_fraction(const std::vector<Timestamp>& ts, double test_fraction) {
  require(test_fraction > 0.0 && test_fraction < 1.0, "test fraction must lie in (0,1)");
  if (ts.size() < 2) throw DataError("too few rows to carve out a test split");
  auto first_test = static_cast<std::size_t>(std::floor((1.0 - test_fraction) * static_cast<double>(ts.size())));
  first_test = std::min(std::max<std::size_t>(first_test, 1), ts.size() - 1);
  return ts[first_test];
}

/// `targets`, when given, supplies per-task targets at the interpolated stamps.
inline std::vector<TaskDataset> run_pipeline(const std::vector<RawSeries>& series, const PipelineOptions& opt,
                                             const std::vector<RawSeries>* targets = nullptr) {
  if (targets) require(targets->size() == series.size(), "pipeline: one target series per task");
  auto merged = merge_on_timestamp(series);
  for (std::size_t t = 0; t < merged.size(); ++t) {
    auto& s = merged[t];
    if (opt.interpolation_factor > 1)
      s = interpolate_features(s, opt.interpolation_factor, targets ? &(*targets)[t] : nullptr);
    if (!opt.shifted_features.empty()) s = add_time_shifts(s, opt.shifted_features, opt.shift_seconds);
  }
  // Shifting trims rows per task; realign in case neighbour gaps differed.
  if (!opt.shifted_features.empty()) merged = merge_on_timestamp(merged);
  const Timestamp boundary = opt.test_boundary.value_or(boundary_from_fraction(merged.front().timestamps, opt.test_fraction));
  std::vector<TaskDataset> out;
  for (std::size_t t = 0; t < merged.size(); ++t)
    out.push_back(split_and_standardize(merged[t], t, boundary, opt.train_fraction, opt.seed));
  return out;
}

}  // namespace mtl
