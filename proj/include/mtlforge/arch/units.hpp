#pragma once

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mtlforge/autodiff/ops.hpp"
#include "mtlforge/autodiff/tape.hpp"
#include "mtlforge/error.hpp"

namespace mtl {

/// Hidden widths, input-adjacent first.
struct LayerPlan {
  std::vector<std::size_t> widths;

  std::size_t depth() const { return widths.size(); }
  std::size_t total() const { return std::accumulate(widths.begin(), widths.end(), std::size_t{0}); }
  friend bool operator==(const LayerPlan&, const LayerPlan&) = default;
};

inline constexpr std::size_t kMinLayerWidth = 5;
inline constexpr std::size_t kWidthPerFeature = 10;

/// First layer is ten neurons per input feature; each further layer halves
/// (floor) with a floor of five, and the plan stops at the first width five.
inline LayerPlan build_layer_plan(std::size_t n_features) {
  require(n_features >= 1, "build_layer_plan: need at least one input feature");
  LayerPlan plan;
  std::size_t w = kWidthPerFeature * n_features;
  plan.widths.push_back(w);
  while (w > kMinLayerWidth) {
    w = std::max(kMinLayerWidth, w / 2);
    plan.widths.push_back(w);
  }
  return plan;
}

/// Widths rounded up to multiples of `subspaces`. Plans always end at width
/// five, so sluice models with an even subspace count need this.
inline LayerPlan round_to_subspaces(LayerPlan plan, std::size_t subspaces) {
  require(subspaces >= 1, "subspaces must be >= 1");
  for (auto& w : plan.widths) w = (w + subspaces - 1) / subspaces * subspaces;
  return plan;
}

enum class AlphaKind { cross_stitch, sluice, ern };

inline std::string_view alpha_kind_name(AlphaKind k) {
  switch (k) {
    case AlphaKind::cross_stitch: return "cross_stitch";
    case AlphaKind::sluice: return "sluice";
    case AlphaKind::ern: return "ern";
  }
  return "?";
}

inline constexpr double kAlphaDiagonal = 0.9;
inline constexpr double kAlphaOffDiagonalMass = 0.1;

/// Square mixing matrix shared by the towers at one hidden layer.
///
/// Rows index outputs and columns index inputs, both task-major:
///  - cross_stitch: one row per task,
///  - sluice: one row per (task, subspace),
///  - ern: one row per (task, neuron).
struct AlphaUnit {
  AlphaKind kind = AlphaKind::cross_stitch;
  Tensor matrix;
  std::vector<std::size_t> widths;  // per-task activation width
  std::size_t subspaces = 1;

  std::size_t tasks() const { return widths.size(); }

  /// (task, subspace) for sluice, (task, neuron) for ern, (task, 0) otherwise.
  std::vector<std::pair<std::size_t, std::size_t>> block_map() const {
    std::vector<std::pair<std::size_t, std::size_t>> map;
    for (std::size_t t = 0; t < widths.size(); ++t) {
      const std::size_t n = kind == AlphaKind::ern      ? widths[t]
                            : kind == AlphaKind::sluice ? subspaces
                                                        : 1;
      for (std::size_t k = 0; k < n; ++k) map.emplace_back(t, k);
    }
    return map;
  }
};

inline std::size_t alpha_dimension(AlphaKind kind, const std::vector<std::size_t>& widths,
                                   std::size_t subspaces) {
  require(!widths.empty(), "alpha unit: need at least one task");
  switch (kind) {
    case AlphaKind::cross_stitch:
      for (auto w : widths)
        require(w == widths.front(), "cross-stitch: task widths must be equal");
      return widths.size();
    case AlphaKind::sluice:
      require(subspaces >= 1, "sluice: subspaces must be >= 1");
      for (auto w : widths) {
        require(w == widths.front(), "sluice: task widths must be equal");
        require(w % subspaces == 0, "sluice: width " + std::to_string(w) +
                                        " is not divisible by " + std::to_string(subspaces) +
                                        " subspaces");
      }
      return widths.size() * subspaces;
    case AlphaKind::ern:
      return std::accumulate(widths.begin(), widths.end(), std::size_t{0});
  }
  return 0;
}

/// 0.9 on the diagonal; the remaining 0.1 spread evenly over the
/// off-diagonal entries, i.e. 0.1/(dim^2 - dim) each.
inline Tensor alpha_init_matrix(std::size_t dim) {
  Tensor m = Tensor::matrix(dim, dim);
  const double off = dim > 1 ? kAlphaOffDiagonalMass / static_cast<double>(dim * dim - dim) : 0.0;
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < dim; ++j) m.at(i, j) = i == j ? kAlphaDiagonal : off;
  return m;
}

inline AlphaUnit init_alpha(AlphaKind kind, std::size_t tasks, std::size_t subspaces,
                            std::vector<std::size_t> widths) {
  require(tasks >= 1 && widths.size() == tasks, "init_alpha: need one width per task");
  if (kind == AlphaKind::cross_stitch) subspaces = 1;
  const std::size_t dim = alpha_dimension(kind, widths, subspaces);
  return AlphaUnit{kind, alpha_init_matrix(dim), std::move(widths), subspaces};
}

namespace ad {

/// Mix per-task activations through an alpha matrix on the tape.
inline std::vector<Var> alpha_mix(AlphaKind kind, Var matrix, const std::vector<Var>& activations,
                                  std::size_t subspaces) {
  require(!activations.empty(), "alpha_combine: no activations");
  std::vector<std::size_t> widths;
  for (const auto& a : activations) widths.push_back(a.value().cols());
  const std::size_t dim = alpha_dimension(kind, widths, kind == AlphaKind::cross_stitch ? 1 : subspaces);
  const Tensor& m = matrix.value();
  if (m.rank() != 2 || m.rows() != dim || m.cols() != dim)
    throw UsageError("alpha_combine: matrix " + shape_str(m.shape()) + " does not match dimension " +
                     std::to_string(dim));
  Var stacked = activations.size() == 1 ? activations.front() : concat_cols(activations);
  Var mixed;
  switch (kind) {
    case AlphaKind::cross_stitch: mixed = chunk_mix(stacked, matrix, widths.front()); break;
    case AlphaKind::sluice: mixed = chunk_mix(stacked, matrix, widths.front() / subspaces); break;
    case AlphaKind::ern: mixed = matmul_nt(stacked, matrix); break;
  }
  std::vector<Var> out;
  std::size_t off = 0;
  for (auto w : widths) {
    out.push_back(slice_cols(mixed, off, w));
    off += w;
  }
  return out;
}

/// Skip read-out: concat(skips) * beta, no bias.
inline Var beta_readout(const std::vector<Var>& skips, Var beta) {
  require(!skips.empty(), "beta_combine: no skip activations");
  Var cat = skips.size() == 1 ? skips.front() : concat_cols(skips);
  const Tensor& b = beta.value();
  if (b.size() != cat.value().cols())
    throw UsageError("beta_combine: concatenated width " + std::to_string(cat.value().cols()) +
                     " does not match beta length " + std::to_string(b.size()));
  return matmul(cat, beta);
}

}  // namespace ad

/// Value-level convenience wrapper around ad::alpha_mix.
inline std::vector<Tensor> alpha_combine(const AlphaUnit& unit, const std::vector<Tensor>& activations) {
  require(activations.size() == unit.tasks(), "alpha_combine: task count mismatch");
  for (std::size_t t = 0; t < activations.size(); ++t)
    if (activations[t].cols() != unit.widths[t])
      throw UsageError("alpha_combine: activation width " + std::to_string(activations[t].cols()) +
                       " for task " + std::to_string(t) + " expected " + std::to_string(unit.widths[t]));
  Tape tape;
  std::vector<Var> in;
  for (const auto& a : activations) in.push_back(tape.constant(a));
  auto out = ad::alpha_mix(unit.kind, tape.constant(unit.matrix), in, unit.subspaces);
  std::vector<Tensor> values;
  for (const auto& v : out) values.push_back(v.value());
  return values;
}

/// Per-task linear read-out over skip-concatenated activations.
struct BetaUnit {
  Tensor weights;  // [sum of widths, 1]

  static BetaUnit uniform(std::size_t total_width) {
    require(total_width >= 1, "beta unit: empty width");
    return BetaUnit{Tensor::matrix(total_width, 1, 1.0 / static_cast<double>(total_width))};
  }
};

inline Tensor beta_combine(const std::vector<Tensor>& skips, const BetaUnit& unit) {
  Tape tape;
  std::vector<Var> in;
  for (const auto& s : skips) in.push_back(tape.constant(s));
  return ad::beta_readout(in, tape.constant(unit.weights)).value();
}

}  // namespace mtl
