#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <future>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mtlforge/arch/checkpoint.hpp"
#include "mtlforge/arch/train.hpp"
#include "mtlforge/cli/config.hpp"
#include "mtlforge/data/cache.hpp"
#include "mtlforge/data/synthetic.hpp"
#include "mtlforge/random.hpp"
#include "mtlforge/stats/report.hpp"

namespace mtl::cli {

namespace fs = std::filesystem;

inline constexpr char kPartialSuffix[] = ".partial";

inline fs::path data_dir(const ExperimentConfig& c) { return fs::path(c.out) / "data"; }
inline fs::path checkpoint_dir(const ExperimentConfig& c) { return fs::path(c.out) / "checkpoints"; }

/// Write via a temporary name and rename, so readers never see half a file.
inline void write_file(const fs::path& p, const std::string& bytes) {
  fs::path tmp = p;
  tmp += ".tmp";
  {
    auto out = io::open_out(tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + tmp.string());
  }
  fs::rename(tmp, p);
}

/// Log sink shared by worker threads; one line per call.
class Log {
 public:
  explicit Log(std::ostream* os) : os_(os) {}
  void line(const std::string& s) {
    if (!os_) return;
    std::lock_guard<std::mutex> lock(mu_);
    *os_ << s << '\n' << std::flush;
  }

 private:
  std::ostream* os_;
  std::mutex mu_;
};

// ---------------------------------------------------------------- prepare

inline std::vector<RawSeries> load_csv_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("data directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no .csv files in " + dir.string());
  std::vector<RawSeries> out;
  for (const auto& f : files) out.push_back(load_csv(f));
  return out;
}

/// Source series through the full pipeline, seeded from the run seed.
inline std::vector<TaskDataset> build_datasets(const ExperimentConfig& c) {
  PipelineOptions opt = c.pipeline;
  opt.seed = c.effective_seed();
  if (c.source == DataSource::synthetic) {
    SyntheticSpec spec = c.synthetic;
    spec.seed = c.effective_seed();
    return run_pipeline(generate_synthetic_series(spec), opt);
  }
  if (c.csv_dir.empty()) throw UsageError("data.csv_dir is required for csv sources");
  const auto series = load_csv_dir(c.csv_dir);
  if (c.target_dir.empty()) return run_pipeline(series, opt);
  std::vector<RawSeries> targets;
  for (const auto& s : series) targets.push_back(load_csv(fs::path(c.target_dir) / (s.task_name + ".csv")));
  return run_pipeline(series, opt, &targets);
}

/// Pairwise Pearson correlation of task targets over the shared timestamps.
inline std::vector<std::vector<double>> target_correlations(const std::vector<TaskDataset>& tasks) {
  const std::size_t T = tasks.size();
  std::vector<std::vector<double>> r(T, std::vector<double>(T, 1.0));
  for (std::size_t a = 0; a < T; ++a)
    for (std::size_t b = a + 1; b < T; ++b) {
      if (tasks[a].timestamps != tasks[b].timestamps)
        throw DataError("tasks " + tasks[a].task_name + " and " + tasks[b].task_name + " are not aligned");
      r[a][b] = r[b][a] = stats::pearson(tasks[a].target, tasks[b].target);
    }
  return r;
}

inline std::string pearson_csv(const std::vector<TaskDataset>& tasks) {
  const auto r = target_correlations(tasks);
  std::ostringstream os;
  os << "task";
  for (const auto& t : tasks) os << ',' << t.task_name;
  os << '\n';
  for (std::size_t a = 0; a < tasks.size(); ++a) {
    os << tasks[a].task_name;
    for (double v : r[a]) os << ',' << stats::format_number(v);
    os << '\n';
  }
  return os.str();
}

/// Runs the data pipeline and caches one file per task plus a manifest.
inline std::vector<TaskDataset> cmd_prepare(const ExperimentConfig& c, std::ostream* log = nullptr) {
  auto tasks = build_datasets(c);
  const fs::path dir = data_dir(c);
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "task_id,task_name,rows,train,val,test\n";
  for (const auto& t : tasks) {
    std::ostringstream bytes;
    write_dataset(bytes, t);
    write_file(dir / (t.task_name + ".mtlds"), bytes.str());
    manifest << t.task_id << ',' << t.task_name << ',' << t.rows() << ',' << t.indices(Split::train).size() << ','
             << t.indices(Split::val).size() << ',' << t.indices(Split::test).size() << '\n';
  }
  write_file(dir / "manifest.csv", manifest.str());
  const std::string pearson = pearson_csv(tasks);
  write_file(fs::path(c.out) / "pearson.csv", pearson);
  if (log) *log << manifest.str() << "\npearson correlation of targets\n" << pearson;
  return tasks;
}

/// Cached datasets in task-id order.
inline std::vector<TaskDataset> load_prepared(const ExperimentConfig& c) {
  const fs::path manifest = data_dir(c) / "manifest.csv";
  if (!fs::exists(manifest)) throw DataError("missing dataset cache " + manifest.string() + " (run prepare first)");
  std::ifstream in(manifest);
  std::string line;
  std::getline(in, line);
  std::vector<TaskDataset> tasks;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = mtl::detail::split_csv_line(line);
    if (cells.size() < 2) throw DataError(manifest.string() + ": malformed line '" + line + "'");
    const fs::path file = data_dir(c) / (std::string(cells[1]) + ".mtlds");
    if (!fs::exists(file)) throw DataError("missing dataset cache " + file.string());
    tasks.push_back(load_dataset(file));
    if (tasks.back().task_id != tasks.size() - 1) throw DataError(file.string() + ": unexpected task id");
  }
  if (tasks.empty()) throw DataError(manifest.string() + ": no tasks");
  return tasks;
}

// ---------------------------------------------------------------- train

/// One independent training run: a whole model, or one task for baseline.
struct TrainJob {
  Arch arch = Arch::baseline;
  std::size_t task = 0;  // baseline only

  std::string name(const std::vector<TaskDataset>& tasks) const {
    return arch == Arch::baseline ? "baseline_" + tasks[task].task_name : std::string(arch_name(arch));
  }
};

inline std::vector<TrainJob> plan_jobs(const ExperimentConfig& c, std::size_t n_tasks) {
  std::vector<TrainJob> jobs;
  for (Arch a : c.models) {
    if (a == Arch::baseline)
      for (std::size_t t = 0; t < n_tasks; ++t) jobs.push_back({a, t});
    else
      jobs.push_back({a, 0});
  }
  return jobs;
}

inline fs::path checkpoint_path(const ExperimentConfig& c, const std::string& job_name) {
  return checkpoint_dir(c) / (job_name + ".ckpt");
}

/// Model seeds are derived from the run seed and the job identity only, so
/// results do not depend on which jobs run or in what order.
inline ModelConfig model_config_for(const ExperimentConfig& c, const TrainJob& job, std::size_t n_tasks,
                                    std::size_t n_features) {
  const std::uint64_t seed = c.effective_seed();
  ModelConfig m;
  m.arch = job.arch;
  m.n_tasks = job.arch == Arch::baseline ? 1 : n_tasks;
  m.n_features = n_features;
  m.subspaces = c.subspaces;
  m.hidden_dropout = c.hidden_dropout;
  m.embedding_dropout = c.embedding_dropout;
  m.leaky_slope = c.leaky_slope;
  if (job.arch == Arch::sn) m.hidden_widths = round_to_subspaces(build_layer_plan(n_features), c.subspaces).widths;
  m.seed = job.arch == Arch::baseline ? mix_seed(seed, 100 + job.task)
                                      : mix_seed(seed, 200 + static_cast<std::uint64_t>(job.arch));
  return m;
}

inline TrainConfig train_config_for(const ExperimentConfig& c) {
  TrainConfig t = c.training;
  t.seed = c.effective_seed();
  return t;
}

struct JobOutcome {
  std::vector<double> epoch_loss;
  bool finished = false;
  bool skipped = false;
  std::exception_ptr error;
};

struct TrainReport {
  std::vector<TrainJob> jobs;
  std::vector<JobOutcome> outcomes;
  std::size_t workers = 1;
};

inline std::size_t effective_workers(const ExperimentConfig& c, std::size_t jobs) {
  std::size_t w = c.workers ? c.workers : std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(w, jobs));
}

/// Trains every job on a pool of worker threads. Finished jobs leave a
/// checkpoint; jobs cut short by `stop` leave `<name>.ckpt.partial`, and the
/// loss trace of an incomplete model is written with a `.partial` suffix.
/// Throws Interrupted if any job was stopped, or the first job error.
/// `on_epoch(job_name, epoch)` is called from worker threads after each epoch.
inline TrainReport cmd_train(const ExperimentConfig& c, const std::atomic<bool>* stop = nullptr,
                             std::ostream* log_stream = nullptr,
                             const std::function<void(const std::string&, std::size_t)>& on_epoch = {}) {
  const auto tasks = load_prepared(c);
  std::vector<const TaskDataset*> all;
  for (const auto& t : tasks) all.push_back(&t);
  const std::size_t n_features = tasks.front().n_features();

  TrainReport rep;
  rep.jobs = plan_jobs(c, tasks.size());
  rep.workers = effective_workers(c, rep.jobs.size());
  Log log(log_stream);
  fs::create_directories(checkpoint_dir(c));

  std::atomic<bool> failed{false};
  auto run_job = [&](const TrainJob& job) {
    JobOutcome out;
    if (failed.load() || (stop && stop->load())) {
      out.skipped = true;
      return out;
    }
    const std::string name = job.name(tasks);
    const fs::path ckpt = checkpoint_path(c, name);
    fs::path partial = ckpt;
    partial += kPartialSuffix;
    Model model(model_config_for(c, job, tasks.size(), n_features));
    const auto subset = job.arch == Arch::baseline ? std::vector<const TaskDataset*>{&tasks[job.task]} : all;
    try {
      log.line("train " + name + ": start");
      const auto r = train(model, subset, train_config_for(c), stop,
                           [&](std::size_t epoch, double loss) {
                             out.epoch_loss.push_back(loss);
                             if (on_epoch) on_epoch(name, epoch);
                           });
      std::ostringstream bytes;
      write_checkpoint(bytes, model);
      write_file(ckpt, bytes.str());
      fs::remove(partial);
      out.finished = true;
      log.line("train " + name + ": done, train mse " + stats::format_number(r.initial_train_mse) + " -> " +
               stats::format_number(r.final_train_mse));
    } catch (const Interrupted&) {
      std::ostringstream bytes;
      write_checkpoint(bytes, model);
      write_file(partial, bytes.str());
      log.line("train " + name + ": interrupted after " + std::to_string(out.epoch_loss.size()) + " epochs");
    } catch (...) {
      out.error = std::current_exception();
      failed = true;
    }
    return out;
  };

  std::vector<std::packaged_task<JobOutcome()>> queue;
  std::vector<std::future<JobOutcome>> results;
  for (const auto& job : rep.jobs) {
    queue.emplace_back([&run_job, job] { return run_job(job); });
    results.push_back(queue.back().get_future());
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < rep.workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t j; (j = next.fetch_add(1)) < queue.size();) queue[j]();
    });
  for (auto& th : pool) th.join();
  for (auto& f : results) rep.outcomes.push_back(f.get());

  for (const auto& o : rep.outcomes)
    if (o.error) std::rethrow_exception(o.error);

  // Loss traces, one file per model: run,epoch,loss.
  std::size_t incomplete = 0;
  for (Arch a : c.models) {
    std::ostringstream csv;
    csv << "run,epoch,loss\n";
    bool complete = true;
    for (std::size_t j = 0; j < rep.jobs.size(); ++j) {
      if (rep.jobs[j].arch != a) continue;
      const auto& o = rep.outcomes[j];
      if (!o.finished) {
        complete = false;
        ++incomplete;
      }
      const std::string run = rep.jobs[j].name(tasks);
      for (std::size_t e = 0; e < o.epoch_loss.size(); ++e)
        csv << run << ',' << e + 1 << ',' << stats::format_number(o.epoch_loss[e]) << '\n';
    }
    const fs::path p = fs::path(c.out) / ("loss_" + std::string(arch_name(a)) + ".csv");
    fs::path partial = p;
    partial += kPartialSuffix;
    if (complete) {
      write_file(p, csv.str());
      fs::remove(partial);
    } else {
      write_file(partial, csv.str());
    }
  }
  if (incomplete)
    throw Interrupted("training interrupted: " + std::to_string(incomplete) + " of " +
                      std::to_string(rep.jobs.size()) + " jobs incomplete; partial outputs end in .partial");
  return rep;
}

// ---------------------------------------------------------------- evaluate

inline Model load_job_model(const ExperimentConfig& c, const TrainJob& job, const std::vector<TaskDataset>& tasks) {
  const fs::path p = checkpoint_path(c, job.name(tasks));
  Model m = load_checkpoint(p);
  const auto& mc = m.config();
  const std::size_t want_tasks = job.arch == Arch::baseline ? 1 : tasks.size();
  if (mc.arch != job.arch || mc.n_tasks != want_tasks || mc.n_features != tasks.front().n_features())
    throw DataError("checkpoint " + p.string() + " does not match the prepared data");
  return m;
}

/// Test-split RMSE (standardized target units) per task and model.
inline stats::RmseTable compute_rmse_table(const ExperimentConfig& c, const std::vector<TaskDataset>& tasks) {
  stats::RmseTable table;
  for (const auto& t : tasks) table.tasks.push_back(t.task_name);
  std::vector<const TaskDataset*> all;
  for (const auto& t : tasks) all.push_back(&t);
  auto task_rmse = [](const std::vector<double>& pred, const TaskDataset& d) {
    std::vector<double> target;
    for (auto i : d.indices(Split::test)) target.push_back(d.target[i]);
    return stats::rmse(pred, target);
  };
  for (Arch a : c.models) {
    stats::ModelScores scores{std::string(arch_name(a)), {}};
    if (a == Arch::baseline) {
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        Model m = load_job_model(c, {a, t}, tasks);
        scores.rmse.push_back(task_rmse(predict_split(m, {&tasks[t]}, Split::test).front(), tasks[t]));
      }
    } else {
      Model m = load_job_model(c, {a, 0}, tasks);
      const auto preds = predict_split(m, all, Split::test);
      for (std::size_t t = 0; t < tasks.size(); ++t) scores.rmse.push_back(task_rmse(preds[t], tasks[t]));
    }
    for (double v : scores.rmse)
      if (!std::isfinite(v)) throw NumericError("non-finite test RMSE for " + scores.model);
    table.models.push_back(std::move(scores));
  }
  return table;
}

/// Skill scores, significance, box-plot data and the text summary.
inline stats::EvaluationReport write_report_files(const ExperimentConfig& c, const stats::RmseTable& table,
                                                  std::ostream* log = nullptr) {
  auto rep = stats::evaluate_table(table);
  const fs::path out(c.out);
  fs::create_directories(out);
  auto emit = [&](const char* name, void (*fn)(std::ostream&, const stats::EvaluationReport&)) {
    std::ostringstream os;
    fn(os, rep);
    write_file(out / name, os.str());
  };
  emit("skill_scores.csv", stats::write_skill_scores);
  emit("significance.csv", stats::write_significance);
  emit("boxplot_data.csv", stats::write_boxplot_data);
  std::ostringstream summary;
  stats::write_summary(summary, rep);
  write_file(out / "report.txt", summary.str());
  if (log) *log << summary.str();
  return rep;
}

inline stats::EvaluationReport cmd_evaluate(const ExperimentConfig& c, std::ostream* log = nullptr) {
  bool has_baseline = false;
  for (Arch a : c.models) has_baseline |= a == Arch::baseline;
  if (!has_baseline) throw UsageError("evaluate: the model list must include baseline (skill scores are relative to it)");
  const auto tasks = load_prepared(c);
  const auto table = compute_rmse_table(c, tasks);
  std::ostringstream csv;
  stats::write_rmse_table(csv, table);
  fs::create_directories(c.out);
  write_file(fs::path(c.out) / "rmse_table.csv", csv.str());
  return write_report_files(c, table, log);
}

/// Report from an existing RMSE table; `table` defaults to <out>/rmse_table.csv.
inline stats::EvaluationReport cmd_report(const ExperimentConfig& c, const std::string& table = "",
                                          std::ostream* log = nullptr) {
  const fs::path p = table.empty() ? fs::path(c.out) / "rmse_table.csv" : fs::path(table);
  if (!fs::exists(p)) throw DataError("missing RMSE table " + p.string() + " (run evaluate first)");
  return write_report_files(c, stats::load_rmse_table(p), log);
}

}  // namespace mtl::cli
