// Copyright 2026 the ptlab authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PTLAB_EVALUATION_HPP_
#define PTLAB_EVALUATION_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ptlab::eval {

enum class MetricKind { kClassification, kRegression };

struct MetricReport {
  std::string task;
  MetricKind kind = MetricKind::kClassification;
  // Classification.
  double accuracy = 0, macro_f1 = 0, weighted_f1 = 0;
  // Regression. Pearson is undefined (not zero) when either side has zero
  // variance; undefined values never enter comparisons.
  std::optional<double> pearson;
  double mse = 0;
  std::vector<MetricReport> per_fold;  // empty outside cross-validation
};

// Accuracy, per-class F1 (0-convention for classes with no predictions),
// macro F1 over classes present in gold, gold-support-weighted F1.
MetricReport compute_metrics(const std::vector<int>& predictions,
                             const std::vector<int>& gold);

// Pearson sample correlation and mean squared error.
MetricReport compute_metrics(const std::vector<double>& predictions,
                             const std::vector<double>& gold);

// ---------------------------------------------------------------------------
// Cross-validation
// ---------------------------------------------------------------------------

struct KFoldResult {
  std::vector<std::vector<std::size_t>> folds;  // disjoint index sets
  bool strict = true;  // false when some class has fewer than k members
};

// Deterministic stratified split: per-class counts across folds differ by at
// most one. Throws DataError when k exceeds the dataset size.
KFoldResult stratified_kfold(const std::vector<int>& labels, std::size_t k,
                             std::uint64_t seed);

// The factory trains a fresh model on the given training indices and returns
// a predictor over example indices; no state crosses folds. A fold whose
// training throws aborts the run naming the fold.
using ClassifierFactory = std::function<std::function<int(std::size_t)>(
    const std::vector<std::size_t>&)>;
using RegressorFactory = std::function<std::function<double(std::size_t)>(
    const std::vector<std::size_t>&)>;

MetricReport cross_validate_classification(const std::vector<int>& labels,
                                           std::size_t k, std::uint64_t seed,
                                           const ClassifierFactory& factory);

MetricReport cross_validate_regression(const std::vector<double>& labels,
                                       std::size_t k, std::uint64_t seed,
                                       const RegressorFactory& factory);

// ---------------------------------------------------------------------------
// Model comparison ledger
// ---------------------------------------------------------------------------

struct ScoreRecord {
  std::string task, setting, model, metric;
  double value = 0;
};

// CSV with header task,setting,model,metric,value; '#' lines are comments.
std::vector<ScoreRecord> read_score_csv(const std::string& path);
void write_score_csv(const std::string& path,
                     const std::vector<ScoreRecord>& records);

struct PairCounts {
  std::size_t wins = 0, equivalents = 0, losses = 0;
  std::size_t total() const { return wins + equivalents + losses; }
};

struct ComparisonLedger {
  std::vector<std::string> models;  // sorted
  // Ordered pairs, both directions: at({A,B}).wins == at({B,A}).losses.
  std::map<std::pair<std::string, std::string>, PairCounts> pairs;
  double threshold = 0.05;

  const PairCounts& at(const std::string& a, const std::string& b) const;
};

// One comparison per (task, setting, metric) where both models report a
// score. Proportional difference |a-b| / min(a,b): strictly below the
// threshold means equivalent, otherwise the larger raw value wins. Scores
// must be positive.
ComparisonLedger compare(const std::vector<ScoreRecord>& records,
                         double threshold = 0.05);

void write_ledger_csv(const std::string& path, const ComparisonLedger& ledger);

// Human-readable matrix (one row per model, >/=/< columns per opponent).
std::string format_ledger_text(const ComparisonLedger& ledger);

struct ExpectedCounts {
  std::string model_a, model_b;
  std::size_t wins = 0, equivalents = 0, losses = 0;
};

// CSV with header model_a,model_b,wins,equivalents,losses.
std::vector<ExpectedCounts> read_expected_counts_csv(const std::string& path);

// Lines describing every pair whose computed counts differ from the published
// ones; empty when everything matches.
std::vector<std::string> ledger_discrepancies(
    const ComparisonLedger& ledger, const std::vector<ExpectedCounts>& expected);

// Metric report serialization used by the eval subcommand.
void write_metric_report_csv(const std::string& path,
                             const MetricReport& report);
std::string format_metric_report(const MetricReport& report);

}  // namespace ptlab::eval

#endif  // PTLAB_EVALUATION_HPP_
