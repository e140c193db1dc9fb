#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mtlforge/data/series.hpp"
#include "mtlforge/error.hpp"
#include "mtlforge/stats/metrics.hpp"
#include "mtlforge/stats/significance.hpp"

namespace mtl::stats {

/// Shortest round-trip decimal form; identical bytes for identical doubles.
inline std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw NumericError("format_number: conversion failed");
  return std::string(buf, p);
}

/// Per-task RMSE, one column per model.
struct RmseTable {
  std::vector<std::string> tasks;
  std::vector<ModelScores> models;

  const ModelScores* find(const std::string& name) const {
    for (const auto& m : models)
      if (m.model == name) return &m;
    return nullptr;
  }
};

/// CSV with header `task,<model>,...` and one row per task.
inline RmseTable parse_rmse_table(std::string_view text, const std::string& what = "rmse table") {
  RmseTable t;
  std::size_t pos = 0, line_no = 0;
  bool header = false;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (mtl::detail::trim(line).empty()) continue;
    const auto cells = mtl::detail::split_csv_line(line);
    const std::string where = what + " row " + std::to_string(line_no);
    if (!header) {
      if (cells.front() != "task") throw DataError(what + ": first header column must be 'task'");
      if (cells.size() < 2) throw DataError(what + ": no model columns");
      for (std::size_t j = 1; j < cells.size(); ++j) {
        if (cells[j].empty()) throw DataError(what + ": empty model name in header");
        if (t.find(std::string(cells[j]))) throw DataError(what + ": duplicate model '" + std::string(cells[j]) + "'");
        t.models.push_back({std::string(cells[j]), {}});
      }
      header = true;
      continue;
    }
    if (cells.size() != t.models.size() + 1)
      throw DataError(where + ": expected " + std::to_string(t.models.size() + 1) + " cells, found " +
                      std::to_string(cells.size()));
    t.tasks.emplace_back(cells[0]);
    for (std::size_t j = 1; j < cells.size(); ++j) {
      double v;
      if (!mtl::detail::parse_double(cells[j], v) || v < 0.0)
        throw DataError(where + ": invalid RMSE '" + std::string(cells[j]) + "' for " + t.models[j - 1].model);
      t.models[j - 1].rmse.push_back(v);
    }
  }
  if (!header) throw DataError(what + ": empty file");
  if (t.tasks.empty()) throw DataError(what + ": no task rows");
  return t;
}

inline RmseTable load_rmse_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_rmse_table(text, path.string());
}

inline void write_rmse_table(std::ostream& os, const RmseTable& t) {
  os << "task";
  for (const auto& m : t.models) os << ',' << m.model;
  os << '\n';
  for (std::size_t k = 0; k < t.tasks.size(); ++k) {
    os << t.tasks[k];
    for (const auto& m : t.models) os << ',' << format_number(m.rmse.at(k));
    os << '\n';
  }
}

struct ModelEvaluation {
  std::string model;
  double skill = 0.0;
  std::vector<double> skill_per_task;
  std::optional<SignificanceResult> significance;
  std::string note;  // why no test was run, if none was

  bool significant() const { return significance && significance->significant; }
};

struct EvaluationReport {
  RmseTable table;
  std::string baseline;
  std::vector<ModelEvaluation> models;  // same order as table.models
};

/// Skill scores and significance of every model against `baseline`.
inline EvaluationReport evaluate_table(const RmseTable& table, const std::string& baseline = "baseline") {
  const ModelScores* base = table.find(baseline);
  if (!base) throw UsageError("evaluate: table has no '" + baseline + "' column");
  EvaluationReport rep{table, baseline, {}};
  for (const auto& m : table.models) {
    ModelEvaluation e;
    e.model = m.model;
    e.skill_per_task = skill_contributions(m, *base);
    e.skill = skill_score(m, *base);
    if (m.model == baseline) {
      e.note = "reference";
    } else if (m.rmse.size() < kWilcoxonMinPairs) {
      e.note = "fewer than " + std::to_string(kWilcoxonMinPairs) + " tasks";
    } else {
      try {
        e.significance = select_and_run(m, *base);
      } catch (const DataError& err) {
        e.note = err.what();
      }
    }
    rep.models.push_back(std::move(e));
  }
  return rep;
}

inline void write_skill_scores(std::ostream& os, const EvaluationReport& r) {
  os << "model,skill_score\n";
  for (const auto& m : r.models) os << m.model << ',' << format_number(m.skill) << '\n';
}

inline void write_significance(std::ostream& os, const EvaluationReport& r) {
  os << "model,test,statistic,p_value,significant,normality_p,normality_fallback,pairs,note\n";
  for (const auto& m : r.models) {
    os << m.model << ',';
    if (const auto& s = m.significance) {
      os << s->test << ',' << format_number(s->statistic) << ',' << format_number(s->p_value) << ','
         << (s->significant ? "yes" : "no") << ',' << (s->normality_p ? format_number(*s->normality_p) : "") << ','
         << (s->normality_fallback ? "yes" : "no") << ',' << s->pairs << ",\n";
    } else {
      std::string note = m.note;
      for (auto& c : note)
        if (c == ',' || c == '\n') c = ';';
      os << "none,,,,,,0," << note << '\n';
    }
  }
}

/// Long format for box plots: one row per (model, task).
inline void write_boxplot_data(std::ostream& os, const EvaluationReport& r) {
  os << "model,task,rmse,skill\n";
  for (std::size_t j = 0; j < r.models.size(); ++j)
    for (std::size_t k = 0; k < r.table.tasks.size(); ++k)
      os << r.models[j].model << ',' << r.table.tasks[k] << ',' << format_number(r.table.models[j].rmse[k]) << ','
         << format_number(r.models[j].skill_per_task[k]) << '\n';
}

/// Plain-text table; significantly different models carry an asterisk.
inline void write_summary(std::ostream& os, const EvaluationReport& r) {
  std::vector<std::string> heads{"task"};
  for (const auto& m : r.models) heads.push_back(m.model + (m.significant() ? "*" : ""));
  std::vector<std::vector<std::string>> rows;
  for (std::size_t k = 0; k < r.table.tasks.size(); ++k) {
    std::vector<std::string> row{r.table.tasks[k]};
    for (const auto& m : r.table.models) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", m.rmse[k]);
      row.emplace_back(buf);
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::string> skill{"SkillScore"};
  for (const auto& m : r.models) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", m.skill);
    skill.emplace_back(buf);
  }
  rows.push_back(std::move(skill));
  std::vector<std::size_t> width(heads.size());
  for (std::size_t j = 0; j < heads.size(); ++j) {
    width[j] = heads[j].size();
    for (const auto& row : rows) width[j] = std::max(width[j], row[j].size());
  }
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j) os << "  ";
      os << row[j] << std::string(width[j] - row[j].size(), ' ');
    }
    os << '\n';
  };
  emit(heads);
  for (const auto& row : rows) emit(row);
  os << "\n* significantly different from " << r.baseline << " at alpha = " << kSignificanceLevel << "\n\n";
  for (const auto& m : r.models) {
    os << m.model << ": ";
    if (const auto& s = m.significance) {
      os << s->test << " statistic " << format_number(s->statistic) << ", p = " << format_number(s->p_value);
      if (s->normality_p) os << ", Shapiro-Wilk p = " << format_number(*s->normality_p);
      if (s->normality_fallback) os << " (normality rejected, Wilcoxon used)";
    } else {
      os << "no test (" << m.note << ")";
    }
    os << '\n';
  }
}

}  // namespace mtl::stats
