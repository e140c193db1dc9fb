#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <iostream>
#include <optional>

#include "mtlforge/cli/harness.hpp"

namespace {

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop = true; }

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitInterrupted = 130;

}  // namespace

int main(int argc, char** argv) {
  using namespace mtl;
  CLI::App app{"mtl_forge: multi-task regression experiments (prepare, train, evaluate, report)"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path, models, out, table;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  app.add_option("--config", config_path, "INI experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "run seed (falls back to the config, then MTL_FORGE_SEED)");
  app.add_option("--models", models, "comma-separated subset of baseline,mlpnp,mlpwp,hps,csn,sn,ern");
  app.add_option("--workers", workers, "parallel training jobs (default: logical processors)");
  app.add_option("--out", out, "output directory");

  auto* prepare = app.add_subcommand("prepare", "run the data pipeline and cache per-task datasets");
  auto* train = app.add_subcommand("train", "train every model in the list, baseline once per task");
  auto* evaluate = app.add_subcommand("evaluate", "test-split RMSE, skill scores and significance");
  auto* report = app.add_subcommand("report", "skill scores and significance from an RMSE table");
  report->add_option("--table", table, "RMSE CSV (task,<model>...); default <out>/rmse_table.csv")
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  try {
    cli::ExperimentConfig cfg = config_path.empty() ? cli::ExperimentConfig{} : cli::load_config(config_path);
    if (!models.empty()) cfg.models = cli::parse_model_list(models);
    if (workers) cfg.workers = *workers;
    if (!out.empty()) cfg.out = out;
    cli::resolve_seed(cfg, seed);

    if (prepare->parsed()) {
      cli::cmd_prepare(cfg, &std::cout);
      cli::write_file(std::filesystem::path(cfg.out) / "config.ini", cli::emit_config(cfg));
    } else if (train->parsed()) {
      const auto rep = cli::cmd_train(cfg, &g_stop, &std::cerr);
      std::cout << "trained " << rep.jobs.size() << " jobs on " << rep.workers << " workers\n";
    } else if (evaluate->parsed()) {
      cli::cmd_evaluate(cfg, &std::cout);
    } else if (report->parsed()) {
      cli::cmd_report(cfg, table, &std::cout);
    }
  } catch (const Interrupted& e) {
    std::cerr << "interrupted: " << e.what() << '\n';
    return kExitInterrupted;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  }
  return 0;
}
