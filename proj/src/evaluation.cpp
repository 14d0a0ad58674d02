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

#include "ptlab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "ptlab/common.hpp"

namespace ptlab::eval {

MetricReport compute_metrics(const std::vector<int>& predictions,
                             const std::vector<int>& gold) {
  if (gold.empty() || predictions.size() != gold.size()) {
    throw DataError("predictions and gold must be equal-length and non-empty");
  }
  MetricReport report;
  report.kind = MetricKind::kClassification;
  const std::size_t n = gold.size();

  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (predictions[i] == gold[i]) ++correct;
  }
  report.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  std::set<int> classes(gold.begin(), gold.end());
  classes.insert(predictions.begin(), predictions.end());

  double macro_sum = 0, weighted_sum = 0;
  std::size_t gold_classes = 0;
  for (int c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0, support = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool p = predictions[i] == c;
      const bool g = gold[i] == c;
      if (g) ++support;
      if (p && g) {
        ++tp;
      } else if (p) {
        ++fp;
      } else if (g) {
        ++fn;
      }
    }
    const double precision =
        tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp)
                    : 0.0;
    const double recall =
        tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn)
                    : 0.0;
    const double f1 = precision + recall > 0
                          ? 2 * precision * recall / (precision + recall)
                          : 0.0;
    if (support > 0) {  // macro averages over classes present in gold
      macro_sum += f1;
      ++gold_classes;
      weighted_sum += f1 * static_cast<double>(support);
    }
  }
  report.macro_f1 = gold_classes > 0 ? macro_sum / static_cast<double>(gold_classes) : 0.0;
  report.weighted_f1 = weighted_sum / static_cast<double>(n);
  return report;
}

MetricReport compute_metrics(const std::vector<double>& predictions,
                             const std::vector<double>& gold) {
  if (gold.empty() || predictions.size() != gold.size()) {
    throw DataError("predictions and gold must be equal-length and non-empty");
  }
  MetricReport report;
  report.kind = MetricKind::kRegression;
  const std::size_t n = gold.size();

  double mse = 0, mp = 0, mg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = predictions[i] - gold[i];
    mse += d * d;
    mp += predictions[i];
    mg += gold[i];
  }
  report.mse = mse / static_cast<double>(n);
  mp /= static_cast<double>(n);
  mg /= static_cast<double>(n);

  double cov = 0, vp = 0, vg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = predictions[i] - mp;
    const double dg = gold[i] - mg;
    cov += dp * dg;
    vp += dp * dp;
    vg += dg * dg;
  }
  if (vp > 0 && vg > 0) {
    report.pearson = cov / std::sqrt(vp * vg);
  }  // else undefined: zero variance on either side
  return report;
}

KFoldResult stratified_kfold(const std::vector<int>& labels, std::size_t k,
                             std::uint64_t seed) {
  if (k < 2) throw ConfigError("k must be at least 2");
  if (k > labels.size()) {
    throw DataError("k (" + std::to_string(k) + ") exceeds dataset size (" +
                    std::to_string(labels.size()) + ")");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    by_class[labels[i]].push_back(i);
  }
  KFoldResult result;
  result.folds.assign(k, {});
  std::size_t next_fold = 0;  // rolls across classes to balance fold sizes
  std::uint64_t class_stream = 0;
  for (auto& [cls, indices] : by_class) {
    if (indices.size() < k) result.strict = false;
    Rng rng = Rng::derive(seed, 0x5F01D, class_stream++);
    rng.shuffle(indices);
    for (std::size_t idx : indices) {
      result.folds[next_fold].push_back(idx);
      next_fold = (next_fold + 1) % k;
    }
  }
  for (auto& fold : result.folds) std::sort(fold.begin(), fold.end());
  return result;
}

namespace {

MetricReport aggregate_folds(std::vector<MetricReport> per_fold,
                             MetricKind kind) {
  MetricReport agg;
  agg.kind = kind;
  const double n = static_cast<double>(per_fold.size());
  if (kind == MetricKind::kClassification) {
    for (const auto& f : per_fold) {
      agg.accuracy += f.accuracy / n;
      agg.macro_f1 += f.macro_f1 / n;
      agg.weighted_f1 += f.weighted_f1 / n;
    }
  } else {
    double pearson_sum = 0;
    std::size_t pearson_n = 0;
    for (const auto& f : per_fold) {
      agg.mse += f.mse / n;
      if (f.pearson.has_value()) {
        pearson_sum += *f.pearson;
        ++pearson_n;
      }
    }
    if (pearson_n == per_fold.size() && pearson_n > 0) {
      agg.pearson = pearson_sum / static_cast<double>(pearson_n);
    }
  }
  agg.per_fold = std::move(per_fold);
  return agg;
}

}  // namespace

MetricReport cross_validate_classification(const std::vector<int>& labels,
                                           std::size_t k, std::uint64_t seed,
                                           const ClassifierFactory& factory) {
  const KFoldResult kf = stratified_kfold(labels, k, seed);
  std::vector<MetricReport> per_fold;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train;
    for (std::size_t g = 0; g < k; ++g) {
      if (g == f) continue;
      train.insert(train.end(), kf.folds[g].begin(), kf.folds[g].end());
    }
    std::sort(train.begin(), train.end());
    std::function<int(std::size_t)> model;
    try {
      model = factory(train);
    } catch (const std::exception& e) {
      throw DataError("fold " + std::to_string(f) +
                      " training failed: " + e.what());
    }
    std::vector<int> pred, gold;
    for (std::size_t idx : kf.folds[f]) {
      pred.push_back(model(idx));
      gold.push_back(labels[idx]);
    }
    per_fold.push_back(compute_metrics(pred, gold));
  }
  return aggregate_folds(std::move(per_fold), MetricKind::kClassification);
}

MetricReport cross_validate_regression(const std::vector<double>& labels,
                                       std::size_t k, std::uint64_t seed,
                                       const RegressorFactory& factory) {
  std::vector<int> strata(labels.size(), 0);  // regression: plain k-fold
  const KFoldResult kf = stratified_kfold(strata, k, seed);
  std::vector<MetricReport> per_fold;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<std::size_t> train;
    for (std::size_t g = 0; g < k; ++g) {
      if (g == f) continue;
      train.insert(train.end(), kf.folds[g].begin(), kf.folds[g].end());
    }
    std::sort(train.begin(), train.end());
    std::function<double(std::size_t)> model;
    try {
      model = factory(train);
    } catch (const std::exception& e) {
      throw DataError("fold " + std::to_string(f) +
                      " training failed: " + e.what());
    }
    std::vector<double> pred, gold;
    for (std::size_t idx : kf.folds[f]) {
      pred.push_back(model(idx));
      gold.push_back(labels[idx]);
    }
    per_fold.push_back(compute_metrics(pred, gold));
  }
  return aggregate_folds(std::move(per_fold), MetricKind::kRegression);
}

// ---------------------------------------------------------------------------
// Ledger
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

std::vector<ScoreRecord> read_score_csv(const std::string& path) {
  const std::string raw = read_file(path);
  std::istringstream in(raw);
  std::string line;
  std::vector<ScoreRecord> records;
  bool header_seen = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("task,", 0) == 0) continue;  // header row
    }
    const auto fields = split_csv_line(line);
    if (fields.size() != 5) {
      throw DataError("bad score record at " + path + ":" +
                      std::to_string(line_no));
    }
    ScoreRecord rec;
    rec.task = fields[0];
    rec.setting = fields[1];
    rec.model = fields[2];
    rec.metric = fields[3];
    try {
      rec.value = std::stod(fields[4]);
    } catch (const std::exception&) {
      throw DataError("bad score value at " + path + ":" +
                      std::to_string(line_no));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void write_score_csv(const std::string& path,
                     const std::vector<ScoreRecord>& records) {
  std::ostringstream out;
  out << "task,setting,model,metric,value\n";
  for (const auto& r : records) {
    out << r.task << ',' << r.setting << ',' << r.model << ',' << r.metric
        << ',' << r.value << '\n';
  }
  write_file(path, out.str());
}

const PairCounts& ComparisonLedger::at(const std::string& a,
                                       const std::string& b) const {
  auto it = pairs.find({a, b});
  if (it == pairs.end()) {
    throw DataError("no comparison between " + a + " and " + b);
  }
  return it->second;
}

ComparisonLedger compare(const std::vector<ScoreRecord>& records,
                         double threshold) {
  ComparisonLedger ledger;
  ledger.threshold = threshold;

  std::set<std::string> model_set;
  std::map<std::tuple<std::string, std::string, std::string>,
           std::map<std::string, double>>
      by_unit;  // (task, setting, metric) -> model -> score
  for (const auto& r : records) {
    if (r.value <= 0) {
      throw DataError("non-positive score for " + r.model + " on " + r.task +
                      "/" + r.setting + ": proportional difference undefined");
    }
    model_set.insert(r.model);
    by_unit[{r.task, r.setting, r.metric}][r.model] = r.value;
  }
  ledger.models.assign(model_set.begin(), model_set.end());
  for (const auto& a : ledger.models) {
    for (const auto& b : ledger.models) {
      if (a != b) ledger.pairs[{a, b}] = PairCounts{};
    }
  }

  for (const auto& [unit, scores] : by_unit) {
    for (auto ia = scores.begin(); ia != scores.end(); ++ia) {
      for (auto ib = std::next(ia); ib != scores.end(); ++ib) {
        const double sa = ia->second, sb = ib->second;
        const double prop = std::abs(sa - sb) / std::min(sa, sb);
        PairCounts& ab = ledger.pairs[{ia->first, ib->first}];
        PairCounts& ba = ledger.pairs[{ib->first, ia->first}];
        // Strictly below the threshold is equivalent; a tie at exactly the
        // threshold is a win. The 1e-9 guard keeps ties computed from
        // decimal scores (0.04 / 0.80) on the win side despite binary
        // rounding.
        if (prop < threshold - 1e-9) {
          ++ab.equivalents;
          ++ba.equivalents;
        } else if (sa > sb) {
          ++ab.wins;
          ++ba.losses;
        } else {
          ++ab.losses;
          ++ba.wins;
        }
      }
    }
  }
  return ledger;
}

void write_ledger_csv(const std::string& path,
                      const ComparisonLedger& ledger) {
  std::ostringstream out;
  out << "model_a,model_b,wins,equivalents,losses,total\n";
  for (const auto& [key, counts] : ledger.pairs) {
    if (key.first >= key.second) continue;  // one row per unordered pair
    out << key.first << ',' << key.second << ',' << counts.wins << ','
        << counts.equivalents << ',' << counts.losses << ','
        << counts.total() << '\n';
  }
  write_file(path, out.str());
}

std::string format_ledger_text(const ComparisonLedger& ledger) {
  std::ostringstream out;
  out << "Pairwise comparison (threshold " << ledger.threshold * 100
      << "%, proportional difference, larger raw score wins)\n\n";
  out << std::left << std::setw(16) << "";
  for (const auto& b : ledger.models) {
    out << std::setw(18) << (b + "  >  =  <");
  }
  out << '\n';
  for (const auto& a : ledger.models) {
    out << std::left << std::setw(16) << a;
    for (const auto& b : ledger.models) {
      if (a == b) {
        out << std::setw(18) << "-";
        continue;
      }
      const PairCounts& c = ledger.at(a, b);
      std::ostringstream cell;
      cell << c.wins << " / " << c.equivalents << " / " << c.losses;
      out << std::setw(18) << cell.str();
    }
    out << '\n';
  }
  return out.str();
}

std::vector<ExpectedCounts> read_expected_counts_csv(const std::string& path) {
  const std::string raw = read_file(path);
  std::istringstream in(raw);
  std::string line;
  std::vector<ExpectedCounts> out;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("model_a,", 0) == 0) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 5) {
      throw DataError("bad expected-counts record at " + path + ":" +
                      std::to_string(line_no));
    }
    ExpectedCounts e;
    e.model_a = fields[0];
    e.model_b = fields[1];
    e.wins = std::stoul(fields[2]);
    e.equivalents = std::stoul(fields[3]);
    e.losses = std::stoul(fields[4]);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<std::string> ledger_discrepancies(
    const ComparisonLedger& ledger,
    const std::vector<ExpectedCounts>& expected) {
  std::vector<std::string> lines;
  for (const auto& e : expected) {
    auto it = ledger.pairs.find({e.model_a, e.model_b});
    if (it == ledger.pairs.end()) {
      lines.push_back(e.model_a + " vs " + e.model_b +
                      ": pair missing from computed ledger");
      continue;
    }
    const PairCounts& c = it->second;
    if (c.wins != e.wins || c.equivalents != e.equivalents ||
        c.losses != e.losses) {
      std::ostringstream msg;
      msg << e.model_a << " vs " << e.model_b << ": computed " << c.wins << "/"
          << c.equivalents << "/" << c.losses << ", published " << e.wins
          << "/" << e.equivalents << "/" << e.losses;
      lines.push_back(msg.str());
    }
  }
  return lines;
}

void write_metric_report_csv(const std::string& path,
                             const MetricReport& report) {
  std::ostringstream out;
  out << "task,fold,metric,value\n";
  auto emit = [&out, &report](const std::string& fold, const MetricReport& r) {
    out << std::setprecision(10);
    if (r.kind == MetricKind::kClassification) {
      out << report.task << ',' << fold << ",accuracy," << r.accuracy << '\n';
      out << report.task << ',' << fold << ",macro_f1," << r.macro_f1 << '\n';
      out << report.task << ',' << fold << ",weighted_f1," << r.weighted_f1
          << '\n';
    } else {
      out << report.task << ',' << fold << ",pearson,"
          << (r.pearson.has_value() ? std::to_string(*r.pearson)
                                    : std::string("undefined"))
          << '\n';
      out << report.task << ',' << fold << ",mse," << r.mse << '\n';
    }
  };
  emit("mean", report);
  for (std::size_t f = 0; f < report.per_fold.size(); ++f) {
    emit(std::to_string(f), report.per_fold[f]);
  }
  write_file(path, out.str());
}

std::string format_metric_report(const MetricReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "task: " << report.task << '\n';
  if (report.kind == MetricKind::kClassification) {
    out << "accuracy:    " << report.accuracy << '\n';
    out << "macro F1:    " << report.macro_f1 << '\n';
    out << "weighted F1: " << report.weighted_f1 << '\n';
  } else {
    out << "pearson: ";
    if (report.pearson.has_value()) {
      out << *report.pearson << '\n';
    } else {
      out << "undefined (zero variance)\n";
    }
    out << "mse:     " << report.mse << '\n';
  }
  if (!report.per_fold.empty()) {
    out << "folds:       " << report.per_fold.size() << '\n';
  }
  return out.str();
}

}  // namespace ptlab::eval
