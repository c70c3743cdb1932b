#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "creward/core.hpp"

namespace creward {

using PairIndex = std::map<std::string, PairRecord>;
PairIndex index_pairs(const std::vector<PairRecord>& pairs);

struct RateEntry {
  int appearances = 0;
  double wins = 0.0;  // after tie resolution; multiples of 0.5
  double rate = 0.0;

  bool operator==(const RateEntry&) const = default;
};

/// image_id → entry.
using WinningRateTable = std::map<std::string, RateEntry>;

struct WinningRates {
  WinningRateTable table;
  std::vector<std::string> warnings;
};

/// Two-pass winning rates for one annotator (or one aggregate source).
///
/// Pass 1 computes provisional rates from non-tie verdicts only (an image
/// with no decided comparison gets 0.5). Pass 2 awards each tie to the
/// endpoint with the strictly higher provisional rate, or half a win to
/// each when they are equal. Final rate = wins / appearances.
///
/// Labels naming unknown pairs and images of `universe` with no labeled
/// comparison are excluded with a warning.
WinningRates winning_rates(std::span<const PreferenceLabel> labels, const PairIndex& pairs, CreativityType type,
                           std::span<const std::string> universe = {});

/// image_id → rank; 1 = highest rate, ties share the mean of their positions.
using Ranking = std::map<std::string, double>;

Ranking rank_by_rate(const WinningRateTable& table);
/// Higher score → smaller rank, same averaging rule as rank_by_rate.
Ranking rank_by_score(const std::map<std::string, double>& scores);

/// Tie-corrected Spearman: Pearson correlation of the average-rank vectors.
/// nullopt when either ranking is constant. Throws Error{"mismatch"} when the
/// two rankings cover different images.
std::optional<double> spearman(const Ranking& r1, const Ranking& r2);

struct AccuracyReport {
  std::optional<double> accuracy;  // nullopt when every reference verdict is a tie
  int evaluated = 0;               // non-tie reference pairs
  int agreed = 0;
  int candidate_ties = 0;          // counted as disagreement
  bool degenerate = false;         // every evaluated pair had a candidate tie
};

/// Candidate prefers the higher-scored endpoint.
AccuracyReport preference_accuracy(std::span<const PreferenceLabel> reference, const PairIndex& pairs,
                                   const std::map<std::string, double>& candidate_scores, CreativityType type);
/// Candidate verdicts keyed by pair_id.
AccuracyReport preference_accuracy(std::span<const PreferenceLabel> reference,
                                   const std::map<std::string, Verdicts>& candidate_verdicts, CreativityType type);

/// Scores → per-pair verdicts (equal scores give a tie).
std::vector<PreferenceLabel> labels_from_scores(const std::vector<PairRecord>& pairs, const ScoreTable& scores,
                                                const std::string& annotator_id,
                                                const std::string& prompt_version = "scores");

std::map<std::string, double> type_column(const ScoreTable& scores, CreativityType type);

struct CorrelationSummary {
  std::optional<double> mean;
  double std = 0.0;
  int pairs_used = 0;
  std::vector<std::string> warnings;
};

/// Mean Spearman over all unordered annotator pairs; undefined pairs are
/// skipped with a warning.
CorrelationSummary inter_annotator_correlation(const std::vector<std::vector<PreferenceLabel>>& per_annotator,
                                               const PairIndex& pairs, CreativityType type);

/// Arithmetic mean of per-annotator rates. Throws Error{"coverage"} when the
/// annotators rated different image sets.
WinningRateTable aggregate_human(const std::vector<std::vector<PreferenceLabel>>& per_annotator,
                                 const PairIndex& pairs, CreativityType type);

/// Spearman of each axis ranking against the overall ranking.
std::map<CreativityType, std::optional<double>> type_overall_correlation(
    const std::map<CreativityType, Ranking>& rankings);

/// Groups labels by annotator_id (sorted by id).
std::map<std::string, std::vector<PreferenceLabel>> by_annotator(std::span<const PreferenceLabel> labels);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  int n = 0;
};
MeanStd mean_std(std::span<const double> values);

// ---------------------------------------------------------------------------
// Reports

struct CandidateSource {
  std::string name;
  std::vector<PreferenceLabel> labels;  // over the benchmark pairs
};

/// Benchmark report: per object and type, inter-human correlation, each
/// candidate's rank correlation against the human-average ranking and its
/// preference accuracy (mean over human annotators, reference ties
/// excluded), type-vs-overall correlations, and mean ± std over objects.
Json metrics_report(const std::vector<PairRecord>& pairs, const std::vector<ImageRecord>& images,
                    const std::vector<PreferenceLabel>& human_labels,
                    const std::vector<CandidateSource>& candidates);

/// Flattens a metrics report to CSV rows: object,type,source,metric,value.
std::string metrics_report_csv(const Json& report);

}  // namespace creward
