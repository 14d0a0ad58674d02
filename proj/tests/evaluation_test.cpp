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
#include <map>
#include <set>

#include "doctest.h"
#include "ptlab/common.hpp"

using namespace ptlab;
using eval::MetricReport;

namespace {

const std::string kFixtureDir = std::string(PTLAB_SOURCE_DIR) + "/data/fixtures";

// Brute-force reference computed from first principles: explicit counting
// loops per class, no shared code with the implementation.
struct BruteForce {
  double accuracy = 0, macro_f1 = 0, weighted_f1 = 0;
};

BruteForce brute_force_classification(const std::vector<int>& pred,
                                      const std::vector<int>& gold) {
  BruteForce out;
  const double n = static_cast<double>(gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (pred[i] == gold[i]) out.accuracy += 1.0 / n;
  }
  std::set<int> in_gold(gold.begin(), gold.end());
  for (int c : in_gold) {
    double tp = 0, pred_c = 0, gold_c = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      if (pred[i] == c && gold[i] == c) tp += 1;
      if (pred[i] == c) pred_c += 1;
      if (gold[i] == c) gold_c += 1;
    }
    double f1 = 0;
    if (tp > 0) {
      const double precision = tp / pred_c;
      const double recall = tp / gold_c;
      f1 = 2 * precision * recall / (precision + recall);
    }
    out.macro_f1 += f1 / static_cast<double>(in_gold.size());
    out.weighted_f1 += f1 * gold_c / n;
  }
  return out;
}

}  // namespace

TEST_CASE("perfect classification scores one everywhere") {
  const std::vector<int> gold = {0, 1, 2, 0, 1, 2};
  const MetricReport r = eval::compute_metrics(gold, gold);
  CHECK(r.accuracy == 1.0);
  CHECK(r.macro_f1 == 1.0);
  CHECK(r.weighted_f1 == 1.0);
}

TEST_CASE("the worked three-class example reproduces its macro F1") {
  // Hand-built confusion matrix: per-class F1 = 0.5, 0.8, 2/3.
  const std::vector<int> gold = {0, 0, 1, 1, 2, 2};
  const std::vector<int> pred = {0, 1, 1, 1, 2, 0};
  const MetricReport r = eval::compute_metrics(pred, gold);
  CHECK(r.accuracy == doctest::Approx(4.0 / 6.0));
  CHECK(r.macro_f1 == doctest::Approx(0.6556).epsilon(1e-4));
  CHECK(r.macro_f1 == doctest::Approx((0.5 + 0.8 + 2.0 / 3.0) / 3.0));
}

TEST_CASE("regression metrics: identity and the worked example") {
  const std::vector<double> gold = {1.0, 2.5, 3.0, 4.5};
  const MetricReport identity = eval::compute_metrics(gold, gold);
  REQUIRE(identity.pearson.has_value());
  CHECK(*identity.pearson == doctest::Approx(1.0));
  CHECK(identity.mse == 0.0);

  // mse = ((1-2)^2 + (2-4)^2) / 2 = 2.5
  const MetricReport worked =
      eval::compute_metrics(std::vector<double>{1.0, 2.0},
                            std::vector<double>{2.0, 4.0});
  CHECK(worked.mse == doctest::Approx(2.5).epsilon(1e-4));
}

TEST_CASE("zero-variance inputs make pearson undefined, not zero") {
  const MetricReport r =
      eval::compute_metrics(std::vector<double>{3.0, 3.0, 3.0},
                            std::vector<double>{1.0, 2.0, 3.0});
  CHECK_FALSE(r.pearson.has_value());
  CHECK(r.mse > 0.0);
}

TEST_CASE("metric bounds hold on random data") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.next_below(20);
    std::vector<int> gold(n), pred(n);
    std::vector<double> rg(n), rp(n);
    for (std::size_t i = 0; i < n; ++i) {
      gold[i] = static_cast<int>(rng.next_below(4));
      pred[i] = static_cast<int>(rng.next_below(4));
      rg[i] = rng.next_double() * 4 + 1;
      rp[i] = rng.next_double() * 4 + 1;
    }
    const MetricReport c = eval::compute_metrics(pred, gold);
    CHECK(c.accuracy >= 0.0);
    CHECK(c.accuracy <= 1.0);
    CHECK(c.macro_f1 >= 0.0);
    CHECK(c.macro_f1 <= 1.0);
    CHECK(c.weighted_f1 >= 0.0);
    CHECK(c.weighted_f1 <= 1.0);
    const MetricReport reg = eval::compute_metrics(rp, rg);
    CHECK(reg.mse >= 0.0);
    if (reg.pearson.has_value()) {
      CHECK(std::abs(*reg.pearson) <= 1.0 + 1e-12);
    }
  }
}

TEST_CASE("macro and weighted F1 agree on perfectly balanced gold") {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> gold, pred;
    for (int c = 0; c < 3; ++c) {
      for (int i = 0; i < 4; ++i) {
        gold.push_back(c);
        pred.push_back(static_cast<int>(rng.next_below(3)));
      }
    }
    const MetricReport r = eval::compute_metrics(pred, gold);
    CHECK(std::abs(r.macro_f1 - r.weighted_f1) < 1e-9);
  }
}

TEST_CASE("compute_metrics matches brute force on all small datasets") {
  // Exhaustive: every gold/prediction assignment for n <= 6, 3 classes.
  std::size_t mismatches = 0, cases = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < n; ++i) total *= 3;
    for (std::size_t g = 0; g < total; ++g) {
      std::vector<int> gold(n);
      std::size_t gg = g;
      for (std::size_t i = 0; i < n; ++i) {
        gold[i] = static_cast<int>(gg % 3);
        gg /= 3;
      }
      for (std::size_t p = 0; p < total; ++p) {
        std::vector<int> pred(n);
        std::size_t pp = p;
        for (std::size_t i = 0; i < n; ++i) {
          pred[i] = static_cast<int>(pp % 3);
          pp /= 3;
        }
        const MetricReport r = eval::compute_metrics(pred, gold);
        const BruteForce b = brute_force_classification(pred, gold);
        ++cases;
        if (std::abs(r.accuracy - b.accuracy) > 1e-12 ||
            std::abs(r.macro_f1 - b.macro_f1) > 1e-12 ||
            std::abs(r.weighted_f1 - b.weighted_f1) > 1e-12) {
          ++mismatches;
        }
      }
    }
  }
  CHECK(cases == 597870);
  CHECK(mismatches == 0);
}

TEST_CASE("compute_metrics rejects mismatched input") {
  CHECK_THROWS_AS(eval::compute_metrics(std::vector<int>{1},
                                        std::vector<int>{1, 2}),
                  DataError);
  CHECK_THROWS_AS(
      eval::compute_metrics(std::vector<int>{}, std::vector<int>{}),
      DataError);
}

TEST_CASE("stratified folds split balanced classes evenly") {
  std::vector<int> labels;
  for (int i = 0; i < 50; ++i) labels.push_back(0);
  for (int i = 0; i < 50; ++i) labels.push_back(1);
  const auto kf = eval::stratified_kfold(labels, 10, 3);
  CHECK(kf.strict);
  REQUIRE(kf.folds.size() == 10);
  std::multiset<std::size_t> all;
  for (const auto& fold : kf.folds) {
    std::size_t zeros = 0, ones = 0;
    for (std::size_t idx : fold) {
      all.insert(idx);
      if (labels[idx] == 0) {
        ++zeros;
      } else {
        ++ones;
      }
    }
    CHECK(zeros == 5);
    CHECK(ones == 5);
  }
  // Union of folds = the input index multiset.
  CHECK(all.size() == labels.size());
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == labels.size() - 1);
  std::set<std::size_t> unique(all.begin(), all.end());
  CHECK(unique.size() == labels.size());
}

TEST_CASE("a class of 7 members splits 2,2,1,1,1 across 5 folds") {
  std::vector<int> labels(7, 0);
  const auto kf = eval::stratified_kfold(labels, 5, 2);
  std::multiset<std::size_t> counts;
  for (const auto& fold : kf.folds) counts.insert(fold.size());
  CHECK(counts == std::multiset<std::size_t>{1, 1, 1, 2, 2});
  CHECK(kf.strict);  // 7 >= k, so strict stratification held

  std::vector<int> short_class(7, 0);
  short_class.push_back(1);  // one class with a single member
  const auto best_effort = eval::stratified_kfold(short_class, 5, 2);
  CHECK_FALSE(best_effort.strict);
}

TEST_CASE("per-class fold counts always differ by at most one") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 20 + rng.next_below(80);
    std::vector<int> labels(n);
    for (auto& l : labels) l = static_cast<int>(rng.next_below(4));
    const std::size_t k = 2 + rng.next_below(8);
    const auto kf = eval::stratified_kfold(labels, k, trial);
    for (int c = 0; c < 4; ++c) {
      std::size_t lo = n, hi = 0;
      for (const auto& fold : kf.folds) {
        std::size_t count = 0;
        for (std::size_t idx : fold) {
          if (labels[idx] == c) ++count;
        }
        lo = std::min(lo, count);
        hi = std::max(hi, count);
      }
      CHECK(hi - lo <= 1);
    }
  }
}

TEST_CASE("stratified_kfold rejects k larger than the dataset") {
  std::vector<int> labels(4, 0);
  CHECK_THROWS_AS(eval::stratified_kfold(labels, 5, 0), DataError);
  CHECK_THROWS_AS(eval::stratified_kfold(labels, 1, 0), ConfigError);
}

TEST_CASE("folds are deterministic per seed") {
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) labels.push_back(i % 3);
  const auto a = eval::stratified_kfold(labels, 5, 11);
  const auto b = eval::stratified_kfold(labels, 5, 11);
  CHECK(a.folds == b.folds);
  const auto c = eval::stratified_kfold(labels, 5, 12);
  CHECK(a.folds != c.folds);
}

TEST_CASE("cross-validating a constant predictor on balanced data gives 0.5") {
  std::vector<int> labels;
  for (int i = 0; i < 60; ++i) labels.push_back(i % 2);
  const auto factory = [](const std::vector<std::size_t>&) {
    return [](std::size_t) { return 0; };
  };
  const MetricReport r =
      eval::cross_validate_classification(labels, 6, 1, factory);
  CHECK(r.per_fold.size() == 6);
  CHECK(r.accuracy == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("a label-memorizing factory exposes train/test leakage") {
  std::vector<int> labels;
  Rng rng(10);
  for (int i = 0; i < 40; ++i) {
    labels.push_back(static_cast<int>(rng.next_below(2)));
  }
  // The predictor looks labels up directly: if evaluation ever leaked train
  // examples into the test fold (or vice versa), accuracy pins to 1.
  const auto leak_factory = [&labels](const std::vector<std::size_t>&) {
    return [&labels](std::size_t idx) { return labels[idx]; };
  };
  const MetricReport leaked =
      eval::cross_validate_classification(labels, 5, 2, leak_factory);
  CHECK(leaked.accuracy == 1.0);
}

TEST_CASE("fold training failures abort naming the fold") {
  std::vector<int> labels(20, 0);
  for (std::size_t i = 0; i < 10; ++i) labels[i] = 1;
  const auto broken = [](const std::vector<std::size_t>&)
      -> std::function<int(std::size_t)> {
    throw NumericError("synthetic divergence");
  };
  CHECK_THROWS_WITH_AS(
      eval::cross_validate_classification(labels, 4, 0, broken),
      doctest::Contains("fold 0"), DataError);
}

TEST_CASE("aggregated metrics are the arithmetic mean of the folds") {
  std::vector<double> labels;
  Rng rng(3);
  for (int i = 0; i < 40; ++i) labels.push_back(1.0 + 4.0 * rng.next_double());
  const auto factory = [&labels](const std::vector<std::size_t>& train) {
    double mean = 0;
    for (std::size_t idx : train) mean += labels[idx];
    mean /= static_cast<double>(train.size());
    return [mean](std::size_t) { return mean; };
  };
  const MetricReport r = eval::cross_validate_regression(labels, 5, 4, factory);
  REQUIRE(r.per_fold.size() == 5);
  double mean_mse = 0;
  for (const auto& f : r.per_fold) mean_mse += f.mse / 5.0;
  CHECK(std::abs(r.mse - mean_mse) < 1e-9);
}

TEST_CASE("identical scores are always equivalent") {
  std::vector<eval::ScoreRecord> records;
  for (const char* model : {"A", "B", "C"}) {
    records.push_back({"t", "s", model, "accuracy", 0.9});
    records.push_back({"t2", "s", model, "accuracy", 0.5});
  }
  const auto ledger = eval::compare(records);
  for (const char* a : {"A", "B", "C"}) {
    for (const char* b : {"A", "B", "C"}) {
      if (std::string(a) == b) continue;
      CHECK(ledger.at(a, b).equivalents == 2);
      CHECK(ledger.at(a, b).wins == 0);
    }
  }
}

TEST_CASE("a proportional difference of exactly 5 percent is a win") {
  std::vector<eval::ScoreRecord> records = {
      {"t", "s", "A", "accuracy", 0.80},
      {"t", "s", "B", "accuracy", 0.84},
  };
  // |0.04| / 0.80 = 0.05 exactly: not strictly below, so 0.84 wins.
  const auto ledger = eval::compare(records);
  CHECK(ledger.at("B", "A").wins == 1);
  CHECK(ledger.at("A", "B").losses == 1);
  CHECK(ledger.at("A", "B").equivalents == 0);

  // Nudge under the threshold: equivalent.
  records[1].value = 0.8399;
  const auto under = eval::compare(records);
  CHECK(under.at("A", "B").equivalents == 1);
}

TEST_CASE("ledger antisymmetry and count conservation on random tables") {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<eval::ScoreRecord> records;
    const std::size_t settings = 3 + rng.next_below(10);
    for (std::size_t s = 0; s < settings; ++s) {
      for (const char* model : {"A", "B", "C"}) {
        if (rng.next_double() < 0.2) continue;  // some scores missing
        records.push_back({"t", "s" + std::to_string(s), model, "m",
                           0.2 + rng.next_double()});
      }
    }
    const auto ledger = eval::compare(records);
    for (const auto& a : ledger.models) {
      for (const auto& b : ledger.models) {
        if (a == b) continue;
        const auto& ab = ledger.at(a, b);
        const auto& ba = ledger.at(b, a);
        CHECK(ab.wins == ba.losses);
        CHECK(ab.losses == ba.wins);
        CHECK(ab.equivalents == ba.equivalents);
        CHECK(ab.total() == ba.total());
        CHECK(ab.wins + ab.equivalents + ab.losses == ab.total());
      }
    }
  }
}

TEST_CASE("the equivalence verdict is scale invariant") {
  Rng rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const double a = 0.1 + rng.next_double();
    const double b = 0.1 + rng.next_double();
    const double c = 0.01 + 10.0 * rng.next_double();
    auto verdict = [](double x, double y) {
      std::vector<eval::ScoreRecord> records = {
          {"t", "s", "A", "m", x}, {"t", "s", "B", "m", y}};
      const auto ledger = eval::compare(records);
      if (ledger.at("A", "B").equivalents == 1) return 0;
      return ledger.at("A", "B").wins == 1 ? 1 : -1;
    };
    CHECK(verdict(a, b) == verdict(a * c, b * c));
  }
}

TEST_CASE("compare rejects non-positive scores") {
  std::vector<eval::ScoreRecord> records = {
      {"t", "s", "A", "m", 0.0}, {"t", "s", "B", "m", 0.5}};
  CHECK_THROWS_AS(eval::compare(records), DataError);
}

TEST_CASE("the published-score fixture reproduces the pairwise tallies") {
  const auto records =
      eval::read_score_csv(kFixtureDir + "/published_scores.csv");
  const auto ledger = eval::compare(records);

  // 19 settings x 2 metrics with all three models present.
  CHECK(ledger.at("BertPT", "AlbertPT").total() == 38);
  CHECK(ledger.at("BertPT", "Multilingual").total() == 38);
  CHECK(ledger.at("AlbertPT", "Multilingual").total() == 38);
  CHECK(ledger.at("Baseline", "BertPT").total() == 23);

  const auto& ba = ledger.at("BertPT", "AlbertPT");
  CHECK(ba.wins == 4);
  CHECK(ba.equivalents == 28);
  CHECK(ba.losses == 6);

  // Published tallies for the remaining pairs differ from a mechanical
  // re-computation; the discrepancy report must surface them, never hide.
  const auto expected = eval::read_expected_counts_csv(
      kFixtureDir + "/published_comparison_counts.csv");
  const auto discrepancies = eval::ledger_discrepancies(ledger, expected);
  for (const auto& line : discrepancies) {
    CHECK(line.find("BertPT vs AlbertPT") == std::string::npos);
  }
  const std::string text = eval::format_ledger_text(ledger);
  CHECK(text.find("4 / 28 / 6") != std::string::npos);
}
