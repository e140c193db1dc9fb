#pragma once

// Weight-transplant and gradient checks on tiny models, shared by the unit
// suite and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mtlforge/arch/model.hpp"
#include "support/gradcheck.hpp"

namespace mtl::testing {

inline constexpr std::size_t kTinyFeatures = 3;

inline ModelConfig tiny_config(Arch arch, std::size_t tasks, std::vector<std::size_t> widths,
                               std::size_t subspaces = 2, std::uint64_t seed = 1) {
  ModelConfig c;
  c.arch = arch;
  c.n_tasks = arch == Arch::baseline ? 1 : tasks;
  c.n_features = kTinyFeatures;
  c.hidden_widths = std::move(widths);
  c.subspaces = subspaces;
  c.task_embedding = 2;
  c.hour_embedding = 2;
  c.week_embedding = 2;
  c.day_embedding = 2;
  c.seed = seed;
  return c;
}

/// Scramble every parameter and running statistic so that transplants are
/// tested away from the initial values.
inline void randomize(Model& m, Rng& rng) {
  for (auto& p : m.parameters())
    for (auto& v : p.value.data()) v = 0.6 * rng.normal();
  for (auto& b : m.buffers()) {
    const bool is_var = b.name.ends_with("running_var");
    for (auto& v : b.value.data()) v = is_var ? rng.uniform(0.5, 2.0) : 0.3 * rng.normal();
  }
}

/// `rows` rows per task, grouped task-major.
inline Batch random_batch(const ModelConfig& cfg, std::size_t rows, Rng& rng) {
  const std::size_t tasks = cfg.arch == Arch::baseline ? 1 : cfg.n_tasks;
  Batch b;
  b.features = random_tensor({tasks * rows, cfg.n_features}, rng);
  for (std::size_t t = 0; t < tasks; ++t)
    for (std::size_t i = 0; i < rows; ++i) {
      b.task_ids.push_back(static_cast<int>(t));
      b.temporal.push_back({static_cast<int>(rng.below(24)), 1 + static_cast<int>(rng.below(53)),
                            1 + static_cast<int>(rng.below(31))});
    }
  return b;
}

inline Batch task_rows(const Batch& b, std::size_t start, std::size_t count, int task_id) {
  Batch out;
  const std::size_t d = b.features.cols();
  std::vector<double> f(b.features.data().begin() + static_cast<std::ptrdiff_t>(start * d),
                        b.features.data().begin() + static_cast<std::ptrdiff_t>((start + count) * d));
  out.features = Tensor({count, d}, std::move(f));
  out.task_ids.assign(count, task_id);
  out.temporal.assign(b.temporal.begin() + static_cast<std::ptrdiff_t>(start),
                      b.temporal.begin() + static_cast<std::ptrdiff_t>(start + count));
  return out;
}

/// Copy every parameter and buffer named `from_prefix.*` to `to_prefix.*`.
/// Names missing on the destination side are skipped.
inline void transplant(Model& from, const std::string& from_prefix, Model& to, const std::string& to_prefix) {
  for (const auto& p : from.parameters()) {
    if (!p.name.starts_with(from_prefix + ".")) continue;
    const std::string name = to_prefix + p.name.substr(from_prefix.size());
    for (auto& q : to.parameters())
      if (q.name == name) q.value = p.value;
  }
  for (const auto& b : from.buffers()) {
    if (!b.name.starts_with(from_prefix + ".")) continue;
    const std::string name = to_prefix + b.name.substr(from_prefix.size());
    for (auto& q : to.buffers())
      if (q.name == name) q.value = b.value;
  }
}

inline Tensor identity(std::size_t n) {
  Tensor m = Tensor::matrix(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

/// Soft-sharing model with identity alpha (and, for SN/ERN, a beta that reads
/// only the last layer) against independently built per-task MLPs carrying
/// the transplanted tower weights. Returns the largest |prediction gap|.
inline double identity_alpha_gap(Arch arch, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t tasks = 2 + rng.below(2);
  const std::vector<std::size_t> widths{6, 4};
  Model sps(tiny_config(arch, tasks, widths, 2, seed));
  randomize(sps, rng);
  for (auto idx : sps.alpha_params()) {
    auto& a = sps.parameters()[idx].value;
    a = identity(a.rows());
  }
  const std::size_t last = widths.back();
  const std::size_t total = widths[0] + widths[1];
  std::vector<Tensor> readout(tasks);
  for (std::size_t t = 0; t < tasks && arch != Arch::csn; ++t) {
    auto& beta = sps.parameters()[sps.beta_params()[t]].value;
    for (std::size_t i = 0; i < total; ++i) beta[i] = i < total - last ? 0.0 : beta[i];
    readout[t] = Tensor::matrix(last, 1);
    for (std::size_t i = 0; i < last; ++i) readout[t][i] = beta[total - last + i];
  }

  const std::size_t rows = 5;
  const Batch batch = random_batch(sps.config(), rows, rng);
  const auto joint = predict(sps, batch);
  double gap = 0.0;
  for (std::size_t t = 0; t < tasks; ++t) {
    Model solo(tiny_config(Arch::baseline, 1, widths, 2, seed + 1000));
    transplant(sps, "tower" + std::to_string(t), solo, "mlp");
    if (arch != Arch::csn) {
      solo.parameter("mlp.out.weight").value = readout[t];
      solo.parameter("mlp.out.bias").value = Tensor({1}, 0.0);
    }
    const auto own = predict(solo, task_rows(batch, t * rows, rows, 0));
    const std::vector<double> mine(joint.begin() + static_cast<std::ptrdiff_t>(t * rows),
                                   joint.begin() + static_cast<std::ptrdiff_t>((t + 1) * rows));
    gap = std::max(gap, max_abs_diff(mine, own));
  }
  return gap;
}

/// SN with one subspace per layer against CSN carrying the same towers and
/// alpha matrices. The CSN output layer is mirrored by a last-layer beta.
inline double sluice_single_subspace_gap(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t tasks = 2 + rng.below(2);
  const std::vector<std::size_t> widths{5, 3};
  Model csn(tiny_config(Arch::csn, tasks, widths, 1, seed));
  Model sn(tiny_config(Arch::sn, tasks, widths, 1, seed + 7));
  randomize(csn, rng);
  for (std::size_t t = 0; t < tasks; ++t) {
    const std::string tw = "tower" + std::to_string(t);
    transplant(csn, tw, sn, tw);
    csn.parameter(tw + ".out.bias").value = Tensor({1}, 0.0);
    auto& beta = sn.parameter("beta.task" + std::to_string(t)).value;
    const auto& w = csn.parameter(tw + ".out.weight").value;
    for (std::size_t i = 0; i < beta.size(); ++i) beta[i] = i < widths[0] ? 0.0 : w[i - widths[0]];
  }
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::string name = "alpha.layer" + std::to_string(l);
    sn.parameter(name).value = csn.parameter(name).value;
  }
  const Batch batch = random_batch(csn.config(), 4, rng);
  return max_abs_diff(predict(csn, batch), predict(sn, batch));
}

/// ERN whose alpha holds alpha_sn(k,j) * I on every (subspace k, subspace j)
/// block against the SN it was expanded from.
inline double block_constant_ern_gap(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t tasks = 2 + rng.below(2);
  const std::size_t subspaces = 2 + rng.below(2);  // 2 or 3
  const std::vector<std::size_t> widths{6, subspaces == 2 ? std::size_t{4} : std::size_t{3}};
  Model sn(tiny_config(Arch::sn, tasks, widths, subspaces, seed));
  Model ern(tiny_config(Arch::ern, tasks, widths, 1, seed + 7));
  randomize(sn, rng);
  for (std::size_t t = 0; t < tasks; ++t) {
    const std::string tw = "tower" + std::to_string(t);
    transplant(sn, tw, ern, tw);
    const std::string beta = "beta.task" + std::to_string(t);
    ern.parameter(beta).value = sn.parameter(beta).value;
  }
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::string name = "alpha.layer" + std::to_string(l);
    const Tensor& a = sn.parameter(name).value;
    const std::size_t chunk = widths[l] / subspaces;
    const std::size_t dim = tasks * widths[l];
    Tensor m = Tensor::matrix(dim, dim, 0.0);
    for (std::size_t k = 0; k < a.rows(); ++k)
      for (std::size_t j = 0; j < a.cols(); ++j)
        for (std::size_t i = 0; i < chunk; ++i) m.at(k * chunk + i, j * chunk + i) = a.at(k, j);
    ern.parameter(name).value = m;
  }
  const Batch batch = random_batch(sn.config(), 4, rng);
  return max_abs_diff(predict(sn, batch), predict(ern, batch));
}

/// Finite-difference check of a whole tiny model in training mode (dropout
/// masks pinned by reseeding before every forward pass).
inline GradCheckResult architecture_grad_check(Arch arch, std::uint64_t seed, std::size_t per_param = 3) {
  Rng rng(seed);
  Model model(tiny_config(arch, 2, {6, 4}, 2, seed));
  for (auto& p : model.parameters())
    for (auto& v : p.value.data()) v += 0.05 * rng.normal();
  const std::size_t rows = 6;
  const Batch batch = random_batch(model.config(), rows, rng);
  const Tensor target = random_tensor({batch.size(), 1}, rng);
  auto loss_fn = [&](Tape& tape) {
    model.reseed_dropout(seed + 17);
    const auto preds = forward(tape, model, batch, Mode::train);
    std::vector<Var> losses;
    std::size_t off = 0;
    for (const auto& p : preds) {
      const std::size_t n = p.value().rows();
      std::vector<double> y(target.data().begin() + static_cast<std::ptrdiff_t>(off),
                            target.data().begin() + static_cast<std::ptrdiff_t>(off + n));
      losses.push_back(ad::mse_loss(p, tape.constant(Tensor({n, 1}, std::move(y)))));
      off += n;
    }
    Var total = losses.front();
    for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
    return total;
  };
  std::vector<Parameter*> ps;
  for (auto& p : model.parameters()) ps.push_back(&p);
  return grad_check(ps, loss_fn, per_param, 1e-5, seed);
}

}  // namespace mtl::testing
