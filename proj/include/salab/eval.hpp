#pragma once

// Discrimination and calibration metrics, directive attention analysis and
// heatmap CSV files.

#include <set>
#include <string>
#include <vector>

#include "salab/attention.hpp"
#include "salab/kv.hpp"
#include "salab/models.hpp"

namespace salab::eval {

struct PredictionRecord {
  std::string id;
  double score = 0.0;
  int label = 0;
};

/// Mann-Whitney statistic; ties count one half. Needs both classes.
double auc_roc(const std::vector<PredictionRecord>& records);

/// Average precision over the ranking (score desc, id asc). Needs a positive.
double auc_pr(const std::vector<PredictionRecord>& records);

double brier(const std::vector<PredictionRecord>& records);

struct CalibrationBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  double mean_score = 0.0;
  double positive_fraction = 0.0;
  bool empty() const { return count == 0; }
};

/// Equal-width bins on [0, 1]; a score of exactly 1 lands in the last bin.
/// Empty bins are kept and report count 0.
std::vector<CalibrationBin> calibration_curve(const std::vector<PredictionRecord>& records,
                                              std::size_t bins = 10);

/// Largest |mean_score - positive_fraction| over populated bins.
double max_calibration_gap(const std::vector<CalibrationBin>& bins);

/// bin,lower,upper,count,mean_score,positive_fraction,empty
std::string reliability_csv(const std::vector<CalibrationBin>& bins);

struct MetricsReport {
  std::size_t n = 0;
  double prevalence = 0.0;
  double auc_roc = 0.0;
  double auc_pr = 0.0;
  double brier = 0.0;
  std::vector<CalibrationBin> bins;

  KeyValues to_key_values() const;
  std::string to_json() const;
};

MetricsReport evaluate(const std::vector<PredictionRecord>& records, std::size_t bins = 10);

struct DirectiveMass {
  /// One entry per qualifying sentence, in document order.
  std::vector<double> per_sentence;
  double mean = 0.0;
  /// Share of (query row, non-directive column) cells holding exactly 0.
  double nondirective_zero_fraction = 0.0;
  std::size_t nondirective_cells = 0;
};

/// For every sentence holding a directive token: the attention its directive
/// columns receive, averaged over query rows. Uses the first word-level
/// layer. No qualifying sentence is an error.
DirectiveMass directive_attention_mass(models::Model& model,
                                       const std::vector<data::TextDocument>& docs,
                                       const data::Vocabulary& vocab,
                                       const std::set<std::string>& directive_tokens);

/// Mean over query rows of |support| / n.
double support_fraction(const attn::AttentionRecord& record);

/// CSV: header row of column labels (after an empty corner cell), then one
/// row per query with its label first. Weights at 6 decimals.
std::string heatmap_csv(const attn::AttentionRecord& record);
void export_heatmap(const attn::AttentionRecord& record, const std::string& path);
attn::AttentionRecord import_heatmap(const std::string& path);
attn::AttentionRecord parse_heatmap_csv(const std::string& text, const std::string& origin = "<csv>");

}  // namespace salab::eval
