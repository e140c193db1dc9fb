#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <numeric>
#include <vector>

#include "mtlforge/arch/model.hpp"
#include "mtlforge/autodiff/adam.hpp"
#include "mtlforge/autodiff/schedule.hpp"
#include "mtlforge/data/dataset.hpp"
#include "mtlforge/error.hpp"
#include "mtlforge/random.hpp"

namespace mtl {

struct TrainConfig {
  std::size_t cycle_epochs = 20;
  std::size_t fine_tune_epochs = 100;
  std::size_t batch_size = 512;          // per task for aligned models
  std::size_t pooled_batch_size = 2048;  // rows from all tasks together
  double max_lr = 0.01;
  double warmup_fraction = 0.25;
  double start_div = 25.0;
  double final_div = 1e4;
  double fine_tune_lr = 1e-4;
  AdamConfig adam;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean step loss per epoch
  double initial_train_mse = 0.0;  // eval mode, before the first step
  double final_train_mse = 0.0;
  std::uint64_t steps = 0;
};

/// Rows of `tasks` assembled into a model batch. `rows[t]` lists row indices
/// of task t; the model-side task id of tasks[t] is t.
inline Batch make_batch(const std::vector<const TaskDataset*>& tasks,
                        const std::vector<std::vector<std::size_t>>& rows) {
  const std::size_t d = tasks.front()->n_features();
  std::size_t n = 0;
  for (const auto& r : rows) n += r.size();
  std::vector<double> f;
  f.reserve(n * d);
  Batch b;
  b.task_ids.reserve(n);
  b.temporal.reserve(n);
  for (std::size_t t = 0; t < tasks.size(); ++t)
    for (auto i : rows[t]) {
      const auto* row = tasks[t]->features.data() + i * d;
      f.insert(f.end(), row, row + d);
      b.task_ids.push_back(static_cast<int>(t));
      b.temporal.push_back(tasks[t]->temporal[i]);
    }
  b.features = Tensor({n, d}, std::move(f));
  return b;
}

/// Check that `tasks` fit `model` (count, feature width, row alignment).
inline void check_tasks(const Model& model, const std::vector<const TaskDataset*>& tasks) {
  const auto& cfg = model.config();
  if (tasks.empty()) throw DataError("no task data given");
  if (tasks.size() != cfg.n_tasks)
    throw UsageError("model expects " + std::to_string(cfg.n_tasks) + " tasks, got " + std::to_string(tasks.size()));
  for (const auto* t : tasks) {
    if (t->n_features() != cfg.n_features)
      throw DataError(t->task_name + ": " + std::to_string(t->n_features()) + " features, model expects " +
                      std::to_string(cfg.n_features));
    if (is_aligned(cfg.arch) && (t->timestamps != tasks.front()->timestamps || t->split != tasks.front()->split))
      throw DataError(t->task_name + ": rows are not aligned with " + tasks.front()->task_name);
  }
}

/// Eval-mode predictions (standardized units) for every row of `which`, per task.
inline std::vector<std::vector<double>> predict_split(Model& model, const std::vector<const TaskDataset*>& tasks,
                                                      Split which, std::size_t chunk = 4096) {
  check_tasks(model, tasks);
  const std::size_t T = tasks.size();
  std::vector<std::vector<double>> out(T);
  std::vector<std::vector<std::size_t>> idx(T);
  for (std::size_t t = 0; t < T; ++t) idx[t] = tasks[t]->indices(which);
  if (is_aligned(model.arch())) {
    const auto& rows = idx.front();
    for (std::size_t s = 0; s < rows.size(); s += chunk) {
      const std::vector<std::size_t> part(rows.begin() + static_cast<std::ptrdiff_t>(s),
                                          rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), s + chunk)));
      const auto y = predict(model, make_batch(tasks, std::vector<std::vector<std::size_t>>(T, part)));
      for (std::size_t t = 0; t < T; ++t)
        out[t].insert(out[t].end(), y.begin() + static_cast<std::ptrdiff_t>(t * part.size()),
                      y.begin() + static_cast<std::ptrdiff_t>((t + 1) * part.size()));
    }
    return out;
  }
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < idx[t].size(); s += chunk) {
      std::vector<std::vector<std::size_t>> rows(T);
      rows[t].assign(idx[t].begin() + static_cast<std::ptrdiff_t>(s),
                     idx[t].begin() + static_cast<std::ptrdiff_t>(std::min(idx[t].size(), s + chunk)));
      const auto y = predict(model, make_batch(tasks, rows));
      out[t].insert(out[t].end(), y.begin(), y.end());
    }
  return out;
}

/// Mean squared error over all rows of `which` across tasks (standardized units).
inline double split_mse(Model& model, const std::vector<const TaskDataset*>& tasks, Split which) {
  const auto preds = predict_split(model, tasks, which);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    const auto idx = tasks[t]->indices(which);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double d = preds[t][k] - tasks[t]->target[idx[k]];
      s += d * d;
    }
    n += idx.size();
  }
  if (n == 0) throw DataError("split_mse: no rows in split");
  return s / static_cast<double>(n);
}

namespace detail {

// Cut a shuffled order into batches of `size`; a trailing batch of one row
// is dropped because batch-norm needs two rows.
inline std::vector<std::vector<std::size_t>> cut_batches(const std::vector<std::size_t>& order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t s = 0; s < order.size(); s += size) {
    const std::size_t e = std::min(order.size(), s + size);
    if (e - s < 2) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s), order.begin() + static_cast<std::ptrdiff_t>(e));
  }
  return out;
}

}  // namespace detail

/// One-cycle phase followed by the constant-rate fine-tune phase, with Adam.
///
/// Per-task and pooled models draw shuffled rows; aligned models draw the same
/// shuffled train rows for every task so each step sees one timestamp-aligned
/// block per task, and the step loss is the unweighted sum of task MSEs.
/// `stop`, when set during training, aborts with Interrupted.
inline TrainResult train(Model& model, const std::vector<const TaskDataset*>& tasks, const TrainConfig& cfg,
                         const std::atomic<bool>* stop = nullptr,
                         const std::function<void(std::size_t epoch, double loss)>& on_epoch = {}) {
  check_tasks(model, tasks);
  require(cfg.cycle_epochs + cfg.fine_tune_epochs >= 1, "train: no epochs requested");
  const Arch arch = model.arch();
  const bool pooled = is_pooled(arch);
  const bool aligned = is_aligned(arch);
  const std::size_t T = tasks.size();

  // Row universe: (task, row) pairs for pooled models, row indices otherwise.
  std::vector<std::pair<std::size_t, std::size_t>> universe;
  for (std::size_t t = 0; t < (aligned ? 1 : T); ++t)
    for (auto i : tasks[t]->indices(Split::train)) universe.emplace_back(t, i);
  if (universe.empty()) throw DataError("train: empty train split");
  const std::size_t bs = pooled ? cfg.pooled_batch_size : cfg.batch_size;
  require(bs >= 2, "train: batch size must be at least 2");
  if (bs > universe.size())
    throw UsageError("train: batch size " + std::to_string(bs) + " exceeds the " + std::to_string(universe.size()) +
                     " training rows");

  std::vector<std::size_t> order(universe.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t per_epoch = detail::cut_batches(order, bs).size();

  LrSchedule sched;
  sched.max_lr = cfg.max_lr;
  sched.warmup_fraction = cfg.warmup_fraction;
  sched.start_div = cfg.start_div;
  sched.final_div = cfg.final_div;
  sched.fine_tune_lr = cfg.fine_tune_lr;
  sched.total_steps = std::max<std::uint64_t>(1, cfg.cycle_epochs * per_epoch);
  sched.validate();

  Rng shuffler(mix_seed(cfg.seed, 2));
  model.reseed_dropout(mix_seed(cfg.seed, 3));
  OptimizerState opt;
  TrainResult res;
  res.initial_train_mse = split_mse(model, tasks, Split::train);

  const std::size_t epochs = cfg.cycle_epochs + cfg.fine_tune_epochs;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    shuffler.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    const auto batches = detail::cut_batches(order, bs);
    for (const auto& picks : batches) {
      if (stop && stop->load()) throw Interrupted("training interrupted");
      std::vector<std::vector<std::size_t>> rows(T);
      for (auto k : picks) {
        const auto [t, i] = universe[k];
        if (aligned)
          for (auto& r : rows) r.push_back(i);
        else
          rows[t].push_back(i);
      }
      const Batch batch = make_batch(tasks, rows);
      std::vector<double> target;  // same task-major order as the batch
      for (std::size_t t = 0; t < T; ++t)
        for (auto i : rows[t]) target.push_back(tasks[t]->target[i]);
      model.zero_grad();
      Tape tape;
      const auto preds = forward(tape, model, batch, Mode::train);
      std::vector<Var> losses;
      std::size_t off = 0;
      for (const auto& p : preds) {
        const std::size_t n = p.value().rows();
        std::vector<double> y(target.begin() + static_cast<std::ptrdiff_t>(off),
                              target.begin() + static_cast<std::ptrdiff_t>(off + n));
        losses.push_back(ad::mse_loss(p, tape.constant(Tensor({n, 1}, std::move(y)))));
        off += n;
      }
      Var loss = losses.front();
      for (std::size_t i = 1; i < losses.size(); ++i) loss = ad::add(loss, losses[i]);
      tape.backward(loss);
      adam_step(model.parameters(), opt, one_cycle_lr(res.steps, sched), cfg.adam);
      ++res.steps;
      loss_sum += loss.value()[0];
    }
    res.epoch_loss.push_back(loss_sum / static_cast<double>(batches.size()));
    if (on_epoch) on_epoch(epoch, res.epoch_loss.back());
  }
  res.final_train_mse = split_mse(model, tasks, Split::train);
  return res;
}

}  // namespace mtl
