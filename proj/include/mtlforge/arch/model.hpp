#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "mtlforge/arch/units.hpp"
#include "mtlforge/autodiff/init.hpp"
#include "mtlforge/autodiff/ops.hpp"
#include "mtlforge/autodiff/tape.hpp"
#include "mtlforge/error.hpp"
#include "mtlforge/random.hpp"

namespace mtl {

enum class Arch { baseline, mlpnp, mlpwp, hps, csn, sn, ern };

inline constexpr std::array<Arch, 7> kAllArchs = {Arch::baseline, Arch::mlpnp, Arch::mlpwp, Arch::hps,
                                                  Arch::csn,      Arch::sn,    Arch::ern};

inline std::string_view arch_name(Arch a) {
  switch (a) {
    case Arch::baseline: return "baseline";
    case Arch::mlpnp: return "mlpnp";
    case Arch::mlpwp: return "mlpwp";
    case Arch::hps: return "hps";
    case Arch::csn: return "csn";
    case Arch::sn: return "sn";
    case Arch::ern: return "ern";
  }
  return "?";
}

inline Arch parse_arch(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (auto a : kAllArchs)
    if (arch_name(a) == lower) return a;
  throw UsageError("unknown model '" + std::string(name) + "'");
}

/// Pooled models see one batch of rows drawn from all tasks.
inline bool is_pooled(Arch a) { return a == Arch::mlpnp || a == Arch::mlpwp; }
/// Soft parameter sharing: one tower per task coupled through alpha units.
inline bool is_soft_sharing(Arch a) { return a == Arch::csn || a == Arch::sn || a == Arch::ern; }
/// Aligned models consume one timestamp-aligned block per task per step.
inline bool is_aligned(Arch a) { return a == Arch::hps || is_soft_sharing(a); }

inline constexpr int kHourCardinality = 24;
inline constexpr int kWeekCardinality = 53;
inline constexpr int kDayCardinality = 31;

inline std::size_t default_embedding_width(std::size_t cardinality) {
  return std::min<std::size_t>(50, (cardinality + 1) / 2);
}

inline constexpr std::size_t kHpsHeadWidth = 5;

struct ModelConfig {
  Arch arch = Arch::baseline;
  std::size_t n_tasks = 1;
  std::size_t n_features = 1;
  std::size_t subspaces = 2;
  std::vector<std::size_t> hidden_widths;  // empty: derived from n_features
  // Embedding widths; unset means the cardinality heuristic, 0 disables.
  std::optional<std::size_t> task_embedding;
  std::optional<std::size_t> hour_embedding;
  std::optional<std::size_t> week_embedding;
  std::optional<std::size_t> day_embedding;
  double hidden_dropout = 0.5;
  double embedding_dropout = 0.25;
  double leaky_slope = 0.01;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  std::uint64_t seed = 0;

  LayerPlan plan() const {
    return hidden_widths.empty() ? build_layer_plan(n_features) : LayerPlan{hidden_widths};
  }

  std::size_t task_embedding_width() const {
    return arch == Arch::mlpwp ? task_embedding.value_or(default_embedding_width(n_tasks)) : 0;
  }
  std::size_t hour_embedding_width() const { return hour_embedding.value_or(default_embedding_width(kHourCardinality)); }
  std::size_t week_embedding_width() const { return week_embedding.value_or(default_embedding_width(kWeekCardinality)); }
  std::size_t day_embedding_width() const { return day_embedding.value_or(default_embedding_width(kDayCardinality)); }

  std::size_t input_width() const {
    return n_features + task_embedding_width() + hour_embedding_width() + week_embedding_width() +
           day_embedding_width();
  }

  void validate() const {
    require(n_features >= 1, "model config: n_features must be >= 1");
    require(n_tasks >= 1, "model config: n_tasks must be >= 1");
    require(arch != Arch::baseline || n_tasks == 1, "model config: baseline models cover exactly one task");
    require(hidden_dropout >= 0.0 && hidden_dropout < 1.0, "model config: hidden dropout must lie in [0,1)");
    require(embedding_dropout >= 0.0 && embedding_dropout < 1.0,
            "model config: embedding dropout must lie in [0,1)");
    require(leaky_slope >= 0.0, "model config: leaky slope must be >= 0");
    const auto p = plan();
    require(!p.widths.empty(), "model config: empty layer plan");
    for (auto w : p.widths) require(w >= 1, "model config: zero-width layer");
    if (arch == Arch::sn) {
      require(subspaces >= 1, "model config: subspaces must be >= 1");
      for (auto w : p.widths)
        require(w % subspaces == 0, "model config: layer width " + std::to_string(w) +
                                        " is not divisible by " + std::to_string(subspaces) + " subspaces");
    }
  }

  /// Flat key=value form used by checkpoints.
  std::map<std::string, std::string> to_kv() const {
    auto opt = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string("auto"); };
    auto num = [](double v) {
      std::ostringstream os;
      os.precision(17);
      os << v;
      return os.str();
    };
    std::string widths;
    for (std::size_t i = 0; i < hidden_widths.size(); ++i)
      widths += (i ? "," : "") + std::to_string(hidden_widths[i]);
    return {{"arch", std::string(arch_name(arch))},
            {"n_tasks", std::to_string(n_tasks)},
            {"n_features", std::to_string(n_features)},
            {"subspaces", std::to_string(subspaces)},
            {"hidden_widths", widths},
            {"task_embedding", opt(task_embedding)},
            {"hour_embedding", opt(hour_embedding)},
            {"week_embedding", opt(week_embedding)},
            {"day_embedding", opt(day_embedding)},
            {"hidden_dropout", num(hidden_dropout)},
            {"embedding_dropout", num(embedding_dropout)},
            {"leaky_slope", num(leaky_slope)},
            {"bn_eps", num(bn_eps)},
            {"bn_momentum", num(bn_momentum)},
            {"seed", std::to_string(seed)}};
  }

  static ModelConfig from_kv(const std::map<std::string, std::string>& kv) {
    auto get = [&](const char* k) -> const std::string& {
      auto it = kv.find(k);
      if (it == kv.end()) throw DataError(std::string("model config: missing key ") + k);
      return it->second;
    };
    auto opt = [&](const char* k) -> std::optional<std::size_t> {
      const auto& v = get(k);
      if (v == "auto") return std::nullopt;
      return std::stoull(v);
    };
    ModelConfig c;
    c.arch = parse_arch(get("arch"));
    c.n_tasks = std::stoull(get("n_tasks"));
    c.n_features = std::stoull(get("n_features"));
    c.subspaces = std::stoull(get("subspaces"));
    std::stringstream ws(get("hidden_widths"));
    for (std::string item; std::getline(ws, item, ',');)
      if (!item.empty()) c.hidden_widths.push_back(std::stoull(item));
    c.task_embedding = opt("task_embedding");
    c.hour_embedding = opt("hour_embedding");
    c.week_embedding = opt("week_embedding");
    c.day_embedding = opt("day_embedding");
    c.hidden_dropout = std::stod(get("hidden_dropout"));
    c.embedding_dropout = std::stod(get("embedding_dropout"));
    c.leaky_slope = std::stod(get("leaky_slope"));
    c.bn_eps = std::stod(get("bn_eps"));
    c.bn_momentum = std::stod(get("bn_momentum"));
    c.seed = std::stoull(get("seed"));
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Non-trainable named tensor (batch-norm running statistics).
struct Buffer {
  std::string name;
  Tensor value;
};

/// Rows fed to a model. Temporal ids are (hour 0-23, ISO week 1-53, day 1-31).
///
/// Aligned architectures expect `n_tasks` contiguous blocks of equal size,
/// block t holding task id t.
struct Batch {
  Tensor features;  // [B, D]
  std::vector<int> task_ids;
  std::vector<std::array<int, 3>> temporal;

  std::size_t size() const { return task_ids.size(); }
};

class Model {
 public:
  struct Dense {
    std::size_t weight = 0, bias = 0;
  };
  struct Norm {
    std::size_t gamma = 0, beta = 0, running_mean = 0, running_var = 0;
  };
  struct Hidden {
    Dense dense;
    Norm norm;
  };
  struct Embeddings {
    std::optional<std::size_t> task, hour, week, day;
  };
  struct Tower {
    Embeddings emb;
    std::vector<Hidden> layers;
    std::optional<Dense> out;
  };
  struct Head {
    Hidden hidden;
    Dense out;
  };

  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    plan_ = cfg_.plan();
    Rng init_rng(mix_seed(cfg_.seed, 0));
    dropout_rng_ = Rng(mix_seed(cfg_.seed, 1));
    build(init_rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const LayerPlan& plan() const { return plan_; }
  Arch arch() const { return cfg_.arch; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Buffer>& buffers() { return buffers_; }
  const std::vector<Buffer>& buffers() const { return buffers_; }

  const std::vector<Tower>& towers() const { return towers_; }
  const std::vector<Head>& heads() const { return heads_; }
  const std::vector<std::size_t>& alpha_params() const { return alpha_; }
  const std::vector<std::size_t>& beta_params() const { return beta_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  Parameter& parameter(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw UsageError("model has no parameter '" + std::string(name) + "'");
  }
  Buffer& buffer(std::string_view name) {
    for (auto& b : buffers_)
      if (b.name == name) return b;
    throw UsageError("model has no buffer '" + std::string(name) + "'");
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  Rng& dropout_rng() { return dropout_rng_; }
  void reseed_dropout(std::uint64_t seed) { dropout_rng_ = Rng(seed); }

  /// Alpha unit at hidden layer `layer` as a value type (soft-sharing only).
  AlphaUnit alpha_unit(std::size_t layer) const {
    require(is_soft_sharing(cfg_.arch), "alpha_unit: architecture has no alpha units");
    return AlphaUnit{alpha_kind(), params_.at(alpha_.at(layer)).value,
                     std::vector<std::size_t>(cfg_.n_tasks, plan_.widths.at(layer)), alpha_subspaces()};
  }

  AlphaKind alpha_kind() const {
    return cfg_.arch == Arch::csn ? AlphaKind::cross_stitch
           : cfg_.arch == Arch::sn ? AlphaKind::sluice
                                   : AlphaKind::ern;
  }
  std::size_t alpha_subspaces() const { return cfg_.arch == Arch::sn ? cfg_.subspaces : 1; }

 private:
  std::size_t add_param(std::string name, Tensor value) {
    params_.emplace_back(std::move(name), std::move(value));
    return params_.size() - 1;
  }
  std::size_t add_buffer(std::string name, Tensor value) {
    buffers_.push_back({std::move(name), std::move(value)});
    return buffers_.size() - 1;
  }

  Dense make_dense(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    Dense d;
    d.weight = add_param(prefix + ".weight", xavier_init(in, out, rng));
    d.bias = add_param(prefix + ".bias", Tensor({out}, 0.0));
    return d;
  }

  Hidden make_hidden(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    Hidden h;
    h.dense = make_dense(prefix, in, out, rng);
    h.norm.gamma = add_param(prefix + ".bn.gamma", Tensor({out}, 1.0));
    h.norm.beta = add_param(prefix + ".bn.beta", Tensor({out}, 0.0));
    h.norm.running_mean = add_buffer(prefix + ".bn.running_mean", Tensor({out}, 0.0));
    h.norm.running_var = add_buffer(prefix + ".bn.running_var", Tensor({out}, 1.0));
    return h;
  }

  Tower make_tower(const std::string& prefix, Rng& rng, bool with_output) {
    Tower tw;
    auto emb = [&](const char* what, std::size_t card, std::size_t width) -> std::optional<std::size_t> {
      if (width == 0) return std::nullopt;
      return add_param(prefix + ".emb." + what, xavier_init(card, width, rng));
    };
    tw.emb.task = emb("task", cfg_.n_tasks, cfg_.task_embedding_width());
    tw.emb.hour = emb("hour", kHourCardinality, cfg_.hour_embedding_width());
    tw.emb.week = emb("week", kWeekCardinality, cfg_.week_embedding_width());
    tw.emb.day = emb("day", kDayCardinality, cfg_.day_embedding_width());
    std::size_t in = cfg_.input_width();
    for (std::size_t l = 0; l < plan_.widths.size(); ++l) {
      tw.layers.push_back(make_hidden(prefix + ".layer" + std::to_string(l), in, plan_.widths[l], rng));
      in = plan_.widths[l];
    }
    if (with_output) tw.out = make_dense(prefix + ".out", in, 1, rng);
    return tw;
  }

  void build(Rng& rng) {
    const Arch a = cfg_.arch;
    const std::size_t T = cfg_.n_tasks;
    if (is_soft_sharing(a)) {
      for (std::size_t t = 0; t < T; ++t)
        towers_.push_back(make_tower("tower" + std::to_string(t), rng, a == Arch::csn));
      for (std::size_t l = 0; l < plan_.widths.size(); ++l) {
        const auto unit = init_alpha(alpha_kind(), T, alpha_subspaces(),
                                     std::vector<std::size_t>(T, plan_.widths[l]));
        alpha_.push_back(add_param("alpha.layer" + std::to_string(l), unit.matrix));
      }
      if (a != Arch::csn)
        for (std::size_t t = 0; t < T; ++t)
          beta_.push_back(add_param("beta.task" + std::to_string(t), BetaUnit::uniform(plan_.total()).weights));
    } else if (a == Arch::hps) {
      towers_.push_back(make_tower("trunk", rng, false));
      for (std::size_t t = 0; t < T; ++t) {
        const std::string prefix = "head" + std::to_string(t);
        Head h;
        h.hidden = make_hidden(prefix + ".hidden", plan_.widths.back(), kHpsHeadWidth, rng);
        h.out = make_dense(prefix + ".out", kHpsHeadWidth, 1, rng);
        heads_.push_back(h);
      }
    } else {
      towers_.push_back(make_tower("mlp", rng, true));
    }
  }

  ModelConfig cfg_;
  LayerPlan plan_;
  std::vector<Parameter> params_;
  std::vector<Buffer> buffers_;
  std::vector<Tower> towers_;
  std::vector<Head> heads_;
  std::vector<std::size_t> alpha_;
  std::vector<std::size_t> beta_;
  Rng dropout_rng_;
};

inline Model build_model(const ModelConfig& cfg) { return Model(cfg); }

namespace detail {

// Per-forward view over a model: caches one tape leaf per parameter.
class ForwardPass {
 public:
  ForwardPass(Tape& tape, Model& model, Mode mode)
      : tape_(tape), model_(model), mode_(mode), leaves_(model.parameters().size()) {}

  Var param(std::size_t idx) {
    if (!leaves_[idx]) leaves_[idx] = tape_.parameter(model_.parameters()[idx]);
    return *leaves_[idx];
  }

  Var input(const Model::Tower& tw, const Batch& batch, std::size_t start, std::size_t count) {
    const std::size_t d = batch.features.cols();
    std::vector<double> rows(batch.features.data().begin() + static_cast<std::ptrdiff_t>(start * d),
                             batch.features.data().begin() + static_cast<std::ptrdiff_t>((start + count) * d));
    std::vector<Var> parts{tape_.constant(Tensor({count, d}, std::move(rows)))};
    auto add_embedding = [&](const std::optional<std::size_t>& table, auto id_of) {
      if (!table) return;
      std::vector<int> ids(count);
      for (std::size_t i = 0; i < count; ++i) ids[i] = id_of(start + i);
      Var e = ad::embedding(param(*table), ids);
      if (mode_ == Mode::train) e = ad::dropout(e, model_.config().embedding_dropout, model_.dropout_rng());
      parts.push_back(e);
    };
    add_embedding(tw.emb.task, [&](std::size_t r) { return batch.task_ids[r]; });
    add_embedding(tw.emb.hour, [&](std::size_t r) { return batch.temporal[r][0]; });
    add_embedding(tw.emb.week, [&](std::size_t r) { return batch.temporal[r][1] - 1; });
    add_embedding(tw.emb.day, [&](std::size_t r) { return batch.temporal[r][2] - 1; });
    return parts.size() == 1 ? parts.front() : ad::concat_cols(parts);
  }

  Var dense(const Model::Dense& d, Var x) { return ad::linear(x, param(d.weight), param(d.bias)); }

  /// linear -> leaky ReLU -> batch norm -> dropout
  Var hidden(const Model::Hidden& h, Var x) {
    const ModelConfig& cfg = model_.config();
    Var y = ad::leaky_relu(dense(h.dense, x), cfg.leaky_slope);
    auto& mean = model_.buffers()[h.norm.running_mean].value;
    auto& var = model_.buffers()[h.norm.running_var].value;
    if (mode_ == Mode::train) {
      ad::BatchStats stats;
      y = ad::batch_norm_train(y, param(h.norm.gamma), param(h.norm.beta), cfg.bn_eps, &stats);
      const double n = static_cast<double>(y.value().rows());
      const double m = cfg.bn_momentum;
      for (std::size_t j = 0; j < mean.size(); ++j) {
        mean[j] = (1.0 - m) * mean[j] + m * stats.mean[j];
        var[j] = (1.0 - m) * var[j] + m * stats.var[j] * n / (n - 1.0);
      }
      y = ad::dropout(y, cfg.hidden_dropout, model_.dropout_rng());
    } else {
      y = ad::batch_norm_eval(y, param(h.norm.gamma), param(h.norm.beta), mean, var, cfg.bn_eps);
    }
    return y;
  }

 private:
  Tape& tape_;
  Model& model_;
  Mode mode_;
  std::vector<std::optional<Var>> leaves_;
};

}  // namespace detail

/// Row-block layout of a batch for the model's architecture.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_blocks(const Model& model, const Batch& batch) {
  const auto& cfg = model.config();
  const std::size_t n = batch.size();
  require(n >= 1, "forward: empty batch");
  require(batch.features.rank() == 2 && batch.features.rows() == n && batch.features.cols() == cfg.n_features,
          "forward: feature matrix must be [" + std::to_string(n) + "," + std::to_string(cfg.n_features) + "]");
  require(batch.temporal.size() == n, "forward: temporal id count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    const int t = batch.task_ids[i];
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.n_tasks)
      throw UsageError("forward: unknown task id " + std::to_string(t));
    const auto& tm = batch.temporal[i];
    if (tm[0] < 0 || tm[0] >= kHourCardinality || tm[1] < 1 || tm[1] > kWeekCardinality || tm[2] < 1 ||
        tm[2] > kDayCardinality)
      throw UsageError("forward: temporal ids out of range at row " + std::to_string(i));
  }
  if (!is_aligned(cfg.arch)) return {{0, n}};
  const std::size_t T = cfg.n_tasks;
  require(n % T == 0, "forward: aligned batch size must be a multiple of the task count");
  const std::size_t b = n / T;
  std::vector<std::pair<std::size_t, std::size_t>> blocks;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < b; ++i)
      require(batch.task_ids[t * b + i] == static_cast<int>(t), "forward: aligned batch must be grouped by task");
    blocks.emplace_back(t * b, b);
  }
  return blocks;
}

/// Run the model on `batch`. Returns one prediction block [b,1] per row block:
/// a single block for per-task and pooled models, one per task otherwise.
inline std::vector<Var> forward(Tape& tape, Model& model, const Batch& batch, Mode mode) {
  const auto blocks = batch_blocks(model, batch);
  detail::ForwardPass fp(tape, model, mode);
  const Arch arch = model.arch();
  const auto& towers = model.towers();

  if (!is_aligned(arch)) {
    const auto& tw = towers.front();
    Var h = fp.input(tw, batch, 0, batch.size());
    for (const auto& layer : tw.layers) h = fp.hidden(layer, h);
    return {fp.dense(*tw.out, h)};
  }

  if (arch == Arch::hps) {
    const auto& trunk = towers.front();
    Var h = fp.input(trunk, batch, 0, batch.size());
    for (const auto& layer : trunk.layers) h = fp.hidden(layer, h);
    std::vector<Var> out;
    for (std::size_t t = 0; t < blocks.size(); ++t) {
      const auto& head = model.heads()[t];
      Var ht = ad::slice_rows(h, blocks[t].first, blocks[t].second);
      out.push_back(fp.dense(head.out, fp.hidden(head.hidden, ht)));
    }
    return out;
  }

  const std::size_t T = blocks.size();
  std::vector<Var> h(T);
  for (std::size_t t = 0; t < T; ++t) h[t] = fp.input(towers[t], batch, blocks[t].first, blocks[t].second);
  std::vector<std::vector<Var>> skips(T);
  for (std::size_t l = 0; l < model.plan().depth(); ++l) {
    for (std::size_t t = 0; t < T; ++t) h[t] = fp.hidden(towers[t].layers[l], h[t]);
    h = ad::alpha_mix(model.alpha_kind(), fp.param(model.alpha_params()[l]), h, model.alpha_subspaces());
    for (std::size_t t = 0; t < T; ++t) skips[t].push_back(h[t]);
  }
  std::vector<Var> out;
  for (std::size_t t = 0; t < T; ++t) {
    if (arch == Arch::csn)
      out.push_back(fp.dense(*towers[t].out, h[t]));
    else
      out.push_back(ad::beta_readout(skips[t], fp.param(model.beta_params()[t])));
  }
  return out;
}

/// Eval-mode predictions as a flat vector in batch row order.
inline std::vector<double> predict(Model& model, const Batch& batch) {
  Tape tape;
  const auto blocks = forward(tape, model, batch, Mode::eval);
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto& b : blocks)
    for (double v : b.value().data()) out.push_back(v);
  return out;
}

}  // namespace mtl
