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

#include "ptlab/pretrain_data.hpp"

#include <algorithm>
#include <filesystem>
#include <functional>
#include <numeric>
#include <set>

#include "doctest.h"
#include "ptlab/common.hpp"

namespace fs = std::filesystem;
using namespace ptlab;
using corpus::Document;
using data::Objective;
using data::PairLabel;

namespace {

const std::vector<std::string> kWords = {
    "casa", "gato", "sol",   "mar",    "vida",  "tempo", "noite", "dia",
    "flor", "rio",  "porta", "livro",  "cidade", "campo", "verde", "azul"};

std::vector<Document> synth_corpus(std::size_t docs, std::size_t sentences,
                                   std::size_t words_per_sentence,
                                   std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Document> out;
  for (std::size_t d = 0; d < docs; ++d) {
    Document doc;
    doc.id = "synth#" + std::to_string(d);
    for (std::size_t s = 0; s < sentences; ++s) {
      std::string sentence;
      for (std::size_t w = 0; w < words_per_sentence; ++w) {
        if (!sentence.empty()) sentence.push_back(' ');
        sentence += kWords[rng.next_below(kWords.size())];
      }
      doc.sentences.push_back(std::move(sentence));
    }
    out.push_back(std::move(doc));
  }
  return out;
}

tok::TokenizerModel word_vocab() {
  // Every corpus word is a whole token.
  tok::TokenizerModel model;
  model.algorithm = tok::Algorithm::kWordPiece;
  auto add = [&model](const std::string& t) {
    model.token_to_id.emplace(t, static_cast<int>(model.id_to_token.size()));
    model.id_to_token.push_back(t);
    model.max_piece_cps = std::max(model.max_piece_cps, utf8_decode(t).size());
  };
  for (int s = 0; s < tok::kNumSpecialTokens; ++s) {
    add(tok::kSpecialTokenLiterals[s]);
  }
  for (const auto& w : kWords) add(w);
  return model;
}

std::vector<int> segment_tokens(const data::PretrainInstance& inst,
                                int which) {
  std::vector<int> ids = inst.token_ids;
  for (std::size_t k = 0; k < inst.masked_positions.size(); ++k) {
    ids[inst.masked_positions[k]] = inst.masked_labels[k];
  }
  std::vector<int> out;
  int seg = 0;
  for (std::size_t i = 1; i < ids.size(); ++i) {  // skip [CLS]
    if (ids[i] == tok::kSepId) {
      ++seg;
      continue;
    }
    if (seg == which) out.push_back(ids[i]);
  }
  return out;
}

bool is_contiguous_subsequence(const std::vector<int>& needle,
                               const std::vector<int>& haystack) {
  if (needle.empty()) return true;
  if (needle.size() > haystack.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(),
                   haystack.begin() + static_cast<std::ptrdiff_t>(i))) {
      return true;
    }
  }
  return false;
}

}  // namespace

TEST_CASE("max masked positions caps match the sequence lengths") {
  CHECK(data::max_masked_positions(128) == 20);
  CHECK(data::max_masked_positions(512) == 77);
}

TEST_CASE("pair_sentences produces both branches with correct shapes") {
  std::vector<Document> docs(2);
  docs[0] = {"d0", {"frase um", "frase dois"}};
  docs[1] = {"d1", {"outra um", "outra dois"}};

  bool saw_so_positive = false, saw_so_negative = false;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    for (const auto& p : data::pair_sentences(docs, Objective::kSo, seed)) {
      if (p.label == PairLabel::kPositive) {
        CHECK(((p.a == "frase um" && p.b == "frase dois") ||
               (p.a == "outra um" && p.b == "outra dois")));
        saw_so_positive = true;
      } else {
        CHECK(((p.a == "frase dois" && p.b == "frase um") ||
               (p.a == "outra dois" && p.b == "outra um")));
        saw_so_negative = true;
      }
    }
  }
  CHECK(saw_so_positive);
  CHECK(saw_so_negative);

  bool saw_nsp_negative = false;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    for (const auto& p : data::pair_sentences(docs, Objective::kNsp, seed)) {
      if (p.label == PairLabel::kPositive) {
        CHECK(((p.a == "frase um" && p.b == "frase dois") ||
               (p.a == "outra um" && p.b == "outra dois")));
      } else {
        if (p.a == "frase um") CHECK(p.b.rfind("outra", 0) == 0);
        if (p.a == "outra um") CHECK(p.b.rfind("frase", 0) == 0);
        saw_nsp_negative = true;
      }
    }
  }
  CHECK(saw_nsp_negative);
}

TEST_CASE("pair_sentences balances labels over a large stream") {
  const auto docs = synth_corpus(800, 14, 6, 3);
  const auto pairs = data::pair_sentences(docs, Objective::kNsp, 11);
  REQUIRE(pairs.size() >= 10000);
  std::size_t positives = 0;
  for (const auto& p : pairs) {
    if (p.label == PairLabel::kPositive) ++positives;
  }
  const double frac =
      static_cast<double>(positives) / static_cast<double>(pairs.size());
  CHECK(frac > 0.48);
  CHECK(frac < 0.52);
}

TEST_CASE("pair_sentences requires a partner pool for NSP") {
  std::vector<Document> one_doc{{"d0", {"a b", "c d"}}};
  CHECK_THROWS_AS(data::pair_sentences(one_doc, Objective::kNsp, 1),
                  DataError);
  CHECK_NOTHROW(data::pair_sentences(one_doc, Objective::kSo, 1));
}

TEST_CASE("mask_tokens masks 3 of 20 single-piece words at rate 0.15") {
  std::vector<int> ids(20);
  std::iota(ids.begin(), ids.end(), tok::kNumSpecialTokens);
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (std::size_t i = 0; i < 20; ++i) spans.emplace_back(i, i + 1);
  const auto result = data::mask_tokens(
      ids, spans, 0.15, data::MaskPolicy::kLiteralMask, 5, 100, 20);
  REQUIRE(result.positions.size() == 3);
  for (std::size_t k = 0; k < result.positions.size(); ++k) {
    const std::size_t p = result.positions[k];
    CHECK(result.masked_ids[p] == tok::kMaskId);
    CHECK(result.labels[k] == ids[p]);
  }
}

TEST_CASE("mask_tokens with nothing maskable does nothing") {
  const std::vector<int> ids = {tok::kClsId, tok::kSepId, tok::kSepId};
  const auto result = data::mask_tokens(
      ids, {}, 0.15, data::MaskPolicy::kLiteralMask, 1, 100, 20);
  CHECK(result.positions.empty());
  CHECK(result.masked_ids == ids);
}

TEST_CASE("mask_tokens mean masked count over 10k length-100 sequences") {
  Rng gen(17);
  double total_masked = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<int> ids(100, 7);
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t pos = 0;
    while (pos < 100) {  // word lengths 1..3
      const std::size_t len =
          std::min<std::size_t>(1 + gen.next_below(3), 100 - pos);
      spans.emplace_back(pos, pos + len);
      pos += len;
    }
    const auto result =
        data::mask_tokens(ids, spans, 0.15, data::MaskPolicy::kLiteralMask,
                          1000 + static_cast<std::uint64_t>(trial), 50, 100);
    total_masked += static_cast<double>(result.positions.size());
    std::set<std::size_t> masked(result.positions.begin(),
                                 result.positions.end());
    for (const auto& [b, e] : spans) {
      std::size_t inside = 0;
      for (std::size_t p = b; p < e; ++p) {
        inside += masked.count(p);
      }
      CHECK((inside == 0 || inside == e - b));
    }
  }
  const double mean = total_masked / 10000.0;
  CHECK(mean > 14.5);
  CHECK(mean < 15.5);
}

TEST_CASE("the 80-10-10 policy corrupts at the documented rates") {
  std::size_t mask_count = 0, keep_count = 0, random_count = 0, total = 0;
  for (int trial = 0; trial < 400; ++trial) {
    std::vector<int> ids(100, 9);
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (std::size_t i = 0; i < 100; ++i) spans.emplace_back(i, i + 1);
    const auto result =
        data::mask_tokens(ids, spans, 0.15, data::MaskPolicy::kBert801010,
                          77 + static_cast<std::uint64_t>(trial), 500, 100);
    for (std::size_t k = 0; k < result.positions.size(); ++k) {
      const int now = result.masked_ids[result.positions[k]];
      CHECK(result.labels[k] == 9);
      if (now == tok::kMaskId) {
        ++mask_count;
      } else if (now == 9) {
        ++keep_count;
      } else {
        ++random_count;
        CHECK(now >= tok::kNumSpecialTokens);
        CHECK(now < 500);
      }
      ++total;
    }
  }
  const double n = static_cast<double>(total);
  CHECK(static_cast<double>(mask_count) / n > 0.77);
  CHECK(static_cast<double>(mask_count) / n < 0.83);
  CHECK(static_cast<double>(keep_count) / n > 0.07);
  CHECK(static_cast<double>(keep_count) / n < 0.13);
  CHECK(static_cast<double>(random_count) / n > 0.07);
  CHECK(static_cast<double>(random_count) / n < 0.13);
}

TEST_CASE("truncate_pair removes from the longer segment, one at a time") {
  // Oracle: step-by-step longest-first simulation.
  auto simulate = [](std::vector<int> a, std::vector<int> b,
                     std::size_t budget) {
    while (a.size() + b.size() > budget) {
      if (a.size() >= b.size()) {
        a.pop_back();
      } else {
        b.pop_back();
      }
    }
    return std::make_pair(a, b);
  };
  std::vector<int> a(90), b(45);
  std::iota(a.begin(), a.end(), 100);
  std::iota(b.begin(), b.end(), 500);
  // With the [CLS]/[SEP] overhead of 3, this pair totals max_len + 10.
  const std::size_t budget = 128 - 3;
  auto [sa, sb] = simulate(a, b, budget);
  std::vector<int> ta = a, tb = b;
  data::truncate_pair(ta, tb, budget);
  CHECK(ta == sa);
  CHECK(tb == sb);
  CHECK(ta.size() + tb.size() == budget);
  CHECK(ta.size() == 80);  // all 10 removed from the longer segment
  CHECK(tb.size() == 45);
  CHECK(ta.front() == 100);  // earliest tokens kept
  CHECK(ta.back() == 179);

  std::vector<int> fits_a(60), fits_b(62);
  data::truncate_pair(fits_a, fits_b, budget);
  CHECK(fits_a.size() == 60);  // already fits: untouched
  CHECK(fits_b.size() == 62);
}

TEST_CASE("build_instances satisfies the instance invariants") {
  const auto docs = synth_corpus(40, 16, 6, 21);
  const auto tokenizer = word_vocab();
  for (Objective objective : {Objective::kNsp, Objective::kSo}) {
    data::BuildOptions options;
    options.max_len = 128;
    options.objective = objective;
    options.seed = 9;
    const auto result = data::build_instances(docs, tokenizer, options);
    REQUIRE(result.instances.size() > 20);
    for (const auto& inst : result.instances) {
      REQUIRE(inst.token_ids.size() == inst.segment_ids.size());
      CHECK(inst.token_ids.size() <= inst.max_len);
      CHECK(inst.token_ids.front() == tok::kClsId);
      CHECK(inst.token_ids.back() == tok::kSepId);
      std::size_t seps = 0, first_sep = 0;
      for (std::size_t i = 0; i < inst.token_ids.size(); ++i) {
        if (inst.token_ids[i] == tok::kSepId) {
          if (seps == 0) first_sep = i;
          ++seps;
        }
      }
      CHECK(seps == 2);
      for (std::size_t i = 0; i < inst.segment_ids.size(); ++i) {
        CHECK(inst.segment_ids[i] == (i <= first_sep ? 0 : 1));
      }
      CHECK(inst.masked_positions.size() == inst.masked_labels.size());
      CHECK(std::is_sorted(inst.masked_positions.begin(),
                           inst.masked_positions.end()));
      CHECK(inst.masked_positions.size() <=
            data::max_masked_positions(inst.max_len));
      for (std::size_t p : inst.masked_positions) {
        CHECK(p != 0);
        CHECK(inst.token_ids[p] != tok::kSepId);
      }
      CHECK(data::whole_word_property_holds(inst, tokenizer));
    }
  }
}

TEST_CASE("SO negatives are exact transpositions of consecutive segments") {
  // Short sentences and a roomy max_len: truncation never fires, so the
  // un-swapped pair must appear contiguously in some document stream.
  const auto docs = synth_corpus(12, 6, 4, 5);
  const auto tokenizer = word_vocab();
  std::vector<std::vector<int>> doc_streams;
  for (const auto& doc : docs) {
    std::vector<int> stream;
    for (const auto& s : doc.sentences) {
      const auto ids = tok::encode(tokenizer, s);
      stream.insert(stream.end(), ids.begin(), ids.end());
    }
    doc_streams.push_back(std::move(stream));
  }
  data::BuildOptions options;
  options.max_len = 512;
  options.objective = Objective::kSo;
  options.seed = 31;
  const auto result = data::build_instances(docs, tokenizer, options);
  std::size_t negatives = 0;
  for (const auto& inst : result.instances) {
    const std::vector<int> a = segment_tokens(inst, 0);
    const std::vector<int> b = segment_tokens(inst, 1);
    std::vector<int> ordered;
    if (inst.pair_label == PairLabel::kNegative) {
      ++negatives;
      ordered = b;
      ordered.insert(ordered.end(), a.begin(), a.end());
    } else {
      ordered = a;
      ordered.insert(ordered.end(), b.begin(), b.end());
    }
    bool found = false;
    for (const auto& stream : doc_streams) {
      if (is_contiguous_subsequence(ordered, stream)) {
        found = true;
        break;
      }
    }
    CHECK(found);
  }
  CHECK(negatives > 0);
}

TEST_CASE("build_instances is bit-deterministic") {
  const auto docs = synth_corpus(30, 10, 6, 2);
  const auto tokenizer = word_vocab();
  data::BuildOptions options;
  options.max_len = 128;
  options.seed = 123;
  const auto r1 = data::build_instances(docs, tokenizer, options);
  const auto r2 = data::build_instances(docs, tokenizer, options);
  REQUIRE(r1.instances.size() == r2.instances.size());
  for (std::size_t i = 0; i < r1.instances.size(); ++i) {
    CHECK(r1.instances[i].token_ids == r2.instances[i].token_ids);
    CHECK(r1.instances[i].masked_positions ==
          r2.instances[i].masked_positions);
    CHECK(r1.instances[i].pair_label == r2.instances[i].pair_label);
  }
  data::BuildOptions other = options;
  other.seed = 124;
  const auto r3 = data::build_instances(docs, tokenizer, other);
  bool any_difference = r3.instances.size() != r1.instances.size();
  for (std::size_t i = 0;
       !any_difference &&
       i < std::min(r1.instances.size(), r3.instances.size());
       ++i) {
    any_difference =
        r1.instances[i].token_ids != r3.instances[i].token_ids ||
        r1.instances[i].masked_positions != r3.instances[i].masked_positions;
  }
  CHECK(any_difference);
}

TEST_CASE("build_instances needs a partner pool for NSP") {
  const auto docs = synth_corpus(1, 10, 6, 2);
  const auto tokenizer = word_vocab();
  data::BuildOptions options;
  options.objective = Objective::kNsp;
  CHECK_THROWS_AS(data::build_instances(docs, tokenizer, options), DataError);
  options.objective = Objective::kSo;
  CHECK_NOTHROW(data::build_instances(docs, tokenizer, options));
}

TEST_CASE("instance files round-trip as JSON lines") {
  const auto docs = synth_corpus(10, 8, 6, 4);
  const auto tokenizer = word_vocab();
  data::BuildOptions options;
  options.max_len = 128;
  options.seed = 77;
  const auto result = data::build_instances(docs, tokenizer, options);
  REQUIRE(!result.instances.empty());

  const fs::path dir = fs::temp_directory_path() / "ptlab_instances";
  fs::create_directories(dir);
  const std::string path = (dir / "instances.jsonl").string();
  data::write_instances_jsonl(path, result.instances);
  const auto back = data::read_instances_jsonl(path);
  REQUIRE(back.size() == result.instances.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].token_ids == result.instances[i].token_ids);
    CHECK(back[i].segment_ids == result.instances[i].segment_ids);
    CHECK(back[i].masked_positions == result.instances[i].masked_positions);
    CHECK(back[i].masked_labels == result.instances[i].masked_labels);
    CHECK(back[i].pair_label == result.instances[i].pair_label);
    CHECK(back[i].max_len == result.instances[i].max_len);
  }

  const std::string bad_path = (dir / "bad.jsonl").string();
  write_file(bad_path, "{not json}\n");
  CHECK_THROWS_AS(data::read_instances_jsonl(bad_path), DataError);
}
