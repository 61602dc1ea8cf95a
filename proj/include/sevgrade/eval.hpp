#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sevgrade/dataset.hpp"
#include "sevgrade/scoring.hpp"

namespace sevgrade {

/// Mann–Whitney AUROC: P(positive outranks negative), ties count ½.
double auroc(std::span<const double> scores, const std::vector<bool>& labels);

/// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> mid_ranks(std::span<const double> values);

/// Pearson correlation of mid-ranks.
double spearman(std::span<const double> scores, std::span<const double> grades);

/// One-sided p-value for a positive rank correlation (t approximation, n−2 dof).
double spearman_p_value(double rho, std::size_t n);

struct EvalTask {
  std::string score_column = "s_comb";  // s_ssl, s_sev, s_oa or s_comb
  int severe_min_grade = 4;             // positives for auc_kl_gt3
  /// Record undefined metrics as absent instead of throwing.
  bool allow_undefined = false;
};

struct ClassCounts {
  std::size_t positive = 0;
  std::size_t negative = 0;
  bool operator==(const ClassCounts&) const = default;
};

struct MetricsReport {
  std::string score_column;
  std::size_t n = 0;
  std::optional<double> auc_kl;
  std::optional<double> auc_oarsi;
  std::optional<double> auc_kl_gt3;
  std::optional<double> src_kl;
  std::optional<double> src_p_value;
  ClassCounts kl;
  ClassCounts oarsi;
  ClassCounts kl_gt3;
  std::size_t oarsi_unresolved = 0;
  std::map<std::string, std::string> undefined;  // metric -> reason

  bool operator==(const MetricsReport&) const = default;
};

/// Metrics of one score column against manifest labels. Throws when a scored
/// id is absent from the manifest (listing all of them) or appears twice.
MetricsReport evaluate_run(const ScoreFile& scores, const Manifest& manifest, const EvalTask& task);

/// Every score column that has at least one value.
std::vector<MetricsReport> evaluate_columns(const ScoreFile& scores, const Manifest& manifest, EvalTask task);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single seed
  std::size_t count = 0;
};

struct SeedSummary {
  std::string score_column;
  std::optional<MeanStd> auc_kl, auc_oarsi, auc_kl_gt3, src_kl;
};

/// Aggregates the same column over seeds; metrics undefined in any seed are
/// dropped from that seed only.
SeedSummary summarise(const std::vector<MetricsReport>& per_seed);

/// Fixed-column plain-text table: one row per label, AUCs in percent.
std::string format_table(const std::vector<std::pair<std::string, SeedSummary>>& rows);

/// Structured report; keys are sorted so identical inputs serialise identically.
std::string metrics_json(const std::vector<std::pair<std::string, std::vector<MetricsReport>>>& per_row);

}  // namespace sevgrade
