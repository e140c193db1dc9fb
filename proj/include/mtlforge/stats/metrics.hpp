#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "mtlforge/error.hpp"

namespace mtl::stats {

inline double rmse(std::span<const double> pred, std::span<const double> target) {
  require(pred.size() == target.size(), "rmse: length mismatch " + std::to_string(pred.size()) + " vs " +
                                            std::to_string(target.size()));
  require(!pred.empty(), "rmse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(pred.size()));
}

/// Per-task RMSE of one model; task order is fixed across models.
struct ModelScores {
  std::string model;
  std::vector<double> rmse;
};

/// Per-task terms 1 - rmse_ref / rmse_base.
inline std::vector<double> skill_contributions(const ModelScores& ref, const ModelScores& baseline) {
  require(ref.rmse.size() == baseline.rmse.size(), "skill_score: task counts differ (" + ref.model + " has " +
                                                       std::to_string(ref.rmse.size()) + ", " + baseline.model +
                                                       " has " + std::to_string(baseline.rmse.size()) + ")");
  require(!ref.rmse.empty(), "skill_score: no tasks");
  std::vector<double> out;
  for (std::size_t k = 0; k < ref.rmse.size(); ++k) {
    if (!(baseline.rmse[k] > 0.0)) throw DataError("skill_score: baseline RMSE of task " + std::to_string(k) + " is not positive");
    if (ref.rmse[k] < 0.0) throw DataError("skill_score: negative RMSE for task " + std::to_string(k));
    out.push_back(1.0 - ref.rmse[k] / baseline.rmse[k]);
  }
  return out;
}

/// Mean over tasks of 1 - rmse_ref / rmse_base.
inline double skill_score(const ModelScores& ref, const ModelScores& baseline) {
  const auto c = skill_contributions(ref, baseline);
  double s = 0.0;
  for (double v : c) s += v;
  return s / static_cast<double>(c.size());
}

/// Sample Pearson correlation coefficient.
inline double pearson(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), "pearson: length mismatch");
  require(x.size() >= 2, "pearson: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) throw DataError("pearson: zero variance");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::max(-1.0, std::min(1.0, r));
}

}  // namespace mtl::stats
