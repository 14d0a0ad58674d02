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

#ifndef PTLAB_PRETRAIN_DATA_HPP_
#define PTLAB_PRETRAIN_DATA_HPP_

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ptlab/common.hpp"
#include "ptlab/corpus.hpp"
#include "ptlab/tokenizer.hpp"

namespace ptlab::data {

enum class Objective { kNsp, kSo };
enum class MaskPolicy { kLiteralMask, kBert801010 };
enum class PairLabel { kPositive, kNegative };

struct PretrainInstance {
  std::vector<int> token_ids;     // [CLS] a... [SEP] b... [SEP]
  std::vector<int> segment_ids;   // 0 through the first [SEP], then 1
  std::vector<std::size_t> masked_positions;  // sorted, never cls/sep
  std::vector<int> masked_labels;             // originals at those positions
  PairLabel pair_label = PairLabel::kPositive;
  std::size_t max_len = 128;
};

// Cap on masked positions per instance: 20 at max_len 128, 77 at 512.
inline std::size_t max_masked_positions(std::size_t max_len) {
  return static_cast<std::size_t>(
      std::ceil(0.15 * static_cast<double>(max_len)));
}

struct SentencePair {
  std::string a;
  std::string b;
  PairLabel label = PairLabel::kPositive;
};

// Sentence-level pairing. NSP: with probability 1/2 the true continuation
// (positive), otherwise a random sentence from a different document
// (negative). SO: with probability 1/2 the consecutive pair in order
// (positive), otherwise swapped (negative). Throws DataError for NSP on a
// single-document corpus (no partner pool). Single-sentence documents form no
// pairs and serve only as NSP partners.
std::vector<SentencePair> pair_sentences(
    const std::vector<corpus::Document>& docs, Objective objective,
    std::uint64_t seed);

struct MaskResult {
  std::vector<int> masked_ids;
  std::vector<std::size_t> positions;
  std::vector<int> labels;
};

// Whole-word masking: words (spans over the maskable region) are drawn
// uniformly at random until round(rate * maskable) positions are covered; a
// word that would overshoot the budget is skipped. literal_mask puts [MASK]
// at every selected position; bert_80_10_10 uses the 80% mask / 10% random /
// 10% keep corruption per position.
MaskResult mask_tokens(
    const std::vector<int>& token_ids,
    const std::vector<std::pair<std::size_t, std::size_t>>& word_boundaries,
    double rate, MaskPolicy policy, std::uint64_t rng_seed,
    std::size_t vocab_size, std::size_t max_masked);

// Pairwise truncation to `budget` total tokens: one token at a time from the
// end of the currently longer segment.
void truncate_pair(std::vector<int>& a, std::vector<int>& b,
                   std::size_t budget);

struct BuildOptions {
  std::size_t max_len = 128;  // 128 or 512
  Objective objective = Objective::kNsp;
  MaskPolicy mask_policy = MaskPolicy::kLiteralMask;
  double mask_rate = 0.15;
  std::uint64_t seed = 0;
};

struct BuildResult {
  std::vector<PretrainInstance> instances;
  std::size_t skipped_pairs = 0;
};

// Tokenizes documents, packs consecutive sentences into segment pairs that
// fill max_len, applies the objective's pairing and whole-word masking.
// Deterministic for a fixed (corpus, tokenizer, seed, options): every random
// decision comes from a stream derived from (seed, document, chunk), so a
// parallel run would agree with the serial one bit for bit.
BuildResult build_instances(const std::vector<corpus::Document>& docs,
                            const tok::TokenizerModel& tokenizer,
                            const BuildOptions& options);

// Restores the pre-masking token ids and checks the whole-word property
// against the tokenizer's word grouping. Returns false if any word is
// partially masked.
bool whole_word_property_holds(const PretrainInstance& instance,
                               const tok::TokenizerModel& tokenizer);

// JSON-lines instance file with fields token_ids, segment_ids,
// masked_positions, masked_labels, pair_label, max_len.
void write_instances_jsonl(const std::string& path,
                           const std::vector<PretrainInstance>& instances);
std::vector<PretrainInstance> read_instances_jsonl(const std::string& path);

}  // namespace ptlab::data

#endif  // PTLAB_PRETRAIN_DATA_HPP_
