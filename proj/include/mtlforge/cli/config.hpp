#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mtlforge/arch/model.hpp"
#include "mtlforge/arch/train.hpp"
#include "mtlforge/data/dataset.hpp"
#include "mtlforge/data/synthetic.hpp"
#include "mtlforge/error.hpp"
#include "mtlforge/stats/report.hpp"

namespace mtl::cli {

enum class DataSource { synthetic, csv };

/// Everything one experiment needs. Omitted keys keep these defaults.
struct ExperimentConfig {
  DataSource source = DataSource::synthetic;
  std::string csv_dir;
  std::string target_dir;  // optional fine-resolution targets, same file names as csv_dir
  PipelineOptions pipeline;
  SyntheticSpec synthetic;

  std::vector<Arch> models{kAllArchs.begin(), kAllArchs.end()};
  double hidden_dropout = 0.5;
  double embedding_dropout = 0.25;
  double leaky_slope = 0.01;
  std::size_t subspaces = 2;
  TrainConfig training;

  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;  // 0: one per logical processor
  std::string out = "mtl_forge_out";

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  std::uint64_t effective_seed() const { return seed.value_or(0); }
};

inline std::string_view source_name(DataSource s) { return s == DataSource::csv ? "csv" : "synthetic"; }

inline std::vector<Arch> parse_model_list(std::string_view list) {
  std::vector<Arch> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const std::size_t end = std::min(list.find(',', pos), list.size());
    const auto item = mtl::detail::trim(list.substr(pos, end - pos));
    if (!item.empty()) {
      const Arch a = parse_arch(item);
      for (Arch b : out)
        if (a == b) throw UsageError("model '" + std::string(item) + "' listed twice");
      out.push_back(a);
    }
    pos = end + 1;
  }
  if (out.empty()) throw UsageError("model list is empty");
  return out;
}

inline std::string join_models(const std::vector<Arch>& models) {
  std::string s;
  for (Arch a : models) {
    if (!s.empty()) s += ',';
    s += arch_name(a);
  }
  return s;
}

namespace detail {

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const std::size_t end = std::min(s.find(',', pos), s.size());
    const auto item = mtl::detail::trim(s.substr(pos, end - pos));
    if (!item.empty()) out.emplace_back(item);
    pos = end + 1;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
  return s;
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw UsageError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return out;
}

inline std::int64_t to_i64(const std::string& key, const std::string& v) {
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw UsageError("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

inline double to_f64(const std::string& key, const std::string& v) {
  double out = 0;
  if (!mtl::detail::parse_double(v, out)) throw UsageError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

}  // namespace detail

/// Flat INI: [section] headers with key = value lines.
inline ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw UsageError(std::string("config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  ExperimentConfig c;
  std::set<std::string> seen;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw UsageError("config: key '" + section + "' outside any section");
    for (const auto& [key, node] : body) {
      const std::string k = section + "." + key;
      const std::string v = node.get_value<std::string>();
      using namespace detail;
      if (k == "data.source") {
        if (v == "synthetic") c.source = DataSource::synthetic;
        else if (v == "csv") c.source = DataSource::csv;
        else throw UsageError("config: data.source must be 'synthetic' or 'csv', got '" + v + "'");
      } else if (k == "data.csv_dir") c.csv_dir = v;
      else if (k == "data.target_dir") c.target_dir = v;
      else if (k == "data.interpolation_factor") c.pipeline.interpolation_factor = to_u64(k, v);
      else if (k == "data.shifted_features") c.pipeline.shifted_features = split_list(v);
      else if (k == "data.shift_seconds") c.pipeline.shift_seconds = to_i64(k, v);
      else if (k == "data.test_boundary") {
        try {
          c.pipeline.test_boundary = parse_timestamp(v);
        } catch (const DataError& e) {
          throw UsageError(std::string("config: data.test_boundary: ") + e.what());
        }
      } else if (k == "data.test_fraction") c.pipeline.test_fraction = to_f64(k, v);
      else if (k == "data.train_fraction") c.pipeline.train_fraction = to_f64(k, v);
      else if (k == "synthetic.tasks") c.synthetic.n_tasks = to_u64(k, v);
      else if (k == "synthetic.features") c.synthetic.n_features = to_u64(k, v);
      else if (k == "synthetic.relatedness") c.synthetic.relatedness = to_f64(k, v);
      else if (k == "synthetic.nonlinearity") {
        try {
          c.synthetic.nonlinearity = parse_nonlinearity(v);
        } catch (const std::exception& e) {
          throw UsageError(std::string("config: ") + e.what());
        }
      } else if (k == "synthetic.noise") c.synthetic.noise = to_f64(k, v);
      else if (k == "synthetic.samples") c.synthetic.n_samples = to_u64(k, v);
      else if (k == "synthetic.step_seconds") c.synthetic.step_seconds = to_i64(k, v);
      else if (k == "synthetic.autocorrelation") c.synthetic.autocorrelation = to_f64(k, v);
      else if (k == "synthetic.start") {
        try {
          c.synthetic.start = parse_timestamp(v);
        } catch (const DataError& e) {
          throw UsageError(std::string("config: synthetic.start: ") + e.what());
        }
      } else if (k == "models.list") c.models = parse_model_list(v);
      else if (k == "model.hidden_dropout") c.hidden_dropout = to_f64(k, v);
      else if (k == "model.embedding_dropout") c.embedding_dropout = to_f64(k, v);
      else if (k == "model.leaky_slope") c.leaky_slope = to_f64(k, v);
      else if (k == "model.subspaces") c.subspaces = to_u64(k, v);
      else if (k == "training.max_lr") c.training.max_lr = to_f64(k, v);
      else if (k == "training.cycle_epochs") c.training.cycle_epochs = to_u64(k, v);
      else if (k == "training.fine_tune_epochs") c.training.fine_tune_epochs = to_u64(k, v);
      else if (k == "training.batch_size") c.training.batch_size = to_u64(k, v);
      else if (k == "training.pooled_batch_size") c.training.pooled_batch_size = to_u64(k, v);
      else if (k == "training.warmup_fraction") c.training.warmup_fraction = to_f64(k, v);
      else if (k == "training.start_div") c.training.start_div = to_f64(k, v);
      else if (k == "training.final_div") c.training.final_div = to_f64(k, v);
      else if (k == "training.fine_tune_lr") c.training.fine_tune_lr = to_f64(k, v);
      else if (k == "run.seed") c.seed = to_u64(k, v);
      else if (k == "run.workers") c.workers = to_u64(k, v);
      else if (k == "run.out") c.out = v;
      else throw UsageError("config: unknown key '" + k + "'");
      if (!seen.insert(k).second) throw UsageError("config: duplicate key '" + k + "'");
    }
  }
  return c;
}

inline std::string emit_config(const ExperimentConfig& c) {
  using stats::format_number;
  std::ostringstream os;
  os << "[data]\n"
     << "source = " << source_name(c.source) << '\n';
  if (!c.csv_dir.empty()) os << "csv_dir = " << c.csv_dir << '\n';
  if (!c.target_dir.empty()) os << "target_dir = " << c.target_dir << '\n';
  os << "interpolation_factor = " << c.pipeline.interpolation_factor << '\n';
  if (!c.pipeline.shifted_features.empty()) os << "shifted_features = " << detail::join(c.pipeline.shifted_features) << '\n';
  os << "shift_seconds = " << c.pipeline.shift_seconds << '\n';
  if (c.pipeline.test_boundary) os << "test_boundary = " << format_timestamp(*c.pipeline.test_boundary) << '\n';
  os << "test_fraction = " << format_number(c.pipeline.test_fraction) << '\n'
     << "train_fraction = " << format_number(c.pipeline.train_fraction) << "\n\n"
     << "[synthetic]\n"
     << "tasks = " << c.synthetic.n_tasks << '\n'
     << "features = " << c.synthetic.n_features << '\n'
     << "relatedness = " << format_number(c.synthetic.relatedness) << '\n'
     << "nonlinearity = " << nonlinearity_name(c.synthetic.nonlinearity) << '\n'
     << "noise = " << format_number(c.synthetic.noise) << '\n'
     << "samples = " << c.synthetic.n_samples << '\n'
     << "step_seconds = " << c.synthetic.step_seconds << '\n'
     << "autocorrelation = " << format_number(c.synthetic.autocorrelation) << '\n'
     << "start = " << format_timestamp(c.synthetic.start) << "\n\n"
     << "[models]\n"
     << "list = " << join_models(c.models) << "\n\n"
     << "[model]\n"
     << "hidden_dropout = " << format_number(c.hidden_dropout) << '\n'
     << "embedding_dropout = " << format_number(c.embedding_dropout) << '\n'
     << "leaky_slope = " << format_number(c.leaky_slope) << '\n'
     << "subspaces = " << c.subspaces << "\n\n"
     << "[training]\n"
     << "max_lr = " << format_number(c.training.max_lr) << '\n'
     << "cycle_epochs = " << c.training.cycle_epochs << '\n'
     << "fine_tune_epochs = " << c.training.fine_tune_epochs << '\n'
     << "batch_size = " << c.training.batch_size << '\n'
     << "pooled_batch_size = " << c.training.pooled_batch_size << '\n'
     << "warmup_fraction = " << format_number(c.training.warmup_fraction) << '\n'
     << "start_div = " << format_number(c.training.start_div) << '\n'
     << "final_div = " << format_number(c.training.final_div) << '\n'
     << "fine_tune_lr = " << format_number(c.training.fine_tune_lr) << "\n\n"
     << "[run]\n";
  if (c.seed) os << "seed = " << *c.seed << '\n';
  os << "workers = " << c.workers << '\n'
     << "out = " << c.out << '\n';
  return os.str();
}

inline ExperimentConfig load_config(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot open config " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Seed precedence: explicit flag, then the config file, then MTL_FORGE_SEED.
inline void resolve_seed(ExperimentConfig& c, std::optional<std::uint64_t> flag) {
  if (flag) {
    c.seed = flag;
    return;
  }
  if (c.seed) return;
  if (const char* env = std::getenv("MTL_FORGE_SEED"); env && *env) c.seed = detail::to_u64("MTL_FORGE_SEED", env);
}

}  // namespace mtl::cli
