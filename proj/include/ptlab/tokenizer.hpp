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

#ifndef PTLAB_TOKENIZER_HPP_
#define PTLAB_TOKENIZER_HPP_

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ptlab/corpus.hpp"

namespace ptlab::tok {

enum class Algorithm { kWordPiece, kUnigram };

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kMaskId = 4;
inline constexpr int kNumSpecialTokens = 5;

// Shared literals so downstream modules see one convention regardless of the
// tokenizer algorithm.
extern const char* const kSpecialTokenLiterals[kNumSpecialTokens];

// WordPiece continuation prefix.
inline constexpr const char* kContinuation = "##";
// Unigram word marker (U+2581). Spaces become this character in the piece
// stream, which makes decoding exact. The code point is reserved: literal
// occurrences in input text are treated as spaces.
inline constexpr char32_t kWordMarker = 0x2581;

struct TokenizerModel {
  Algorithm algorithm = Algorithm::kWordPiece;
  std::vector<std::string> id_to_token;            // index == id
  std::unordered_map<std::string, int> token_to_id;
  std::vector<double> log_probs;                   // unigram only, per id
  bool reached_target = true;  // false when the corpus was too small
  std::size_t max_piece_cps = 1;  // longest token, in code points

  int lookup(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? -1 : it->second;
  }
  std::size_t vocab_size() const { return id_to_token.size(); }
};

struct WordPieceOptions {
  std::size_t min_pair_count = 2;   // pairs rarer than this never merge
  std::size_t max_word_cps = 100;   // longer words encode to [UNK]
};

struct UnigramOptions {
  std::size_t max_piece_cps = 12;
  std::size_t seed_factor = 8;      // seed vocabulary = factor * target
  double prune_fraction = 0.20;     // dropped per EM round, down to target
  int em_iterations_per_round = 2;
};

// Per-round corpus log-likelihood after each EM iteration. Within a round the
// sequence is non-decreasing (EM guarantee); pruning between rounds may drop
// it.
struct UnigramTrainLog {
  std::vector<std::vector<double>> round_log_likelihood;
};

// Merge-based WordPiece training. Pairs are scored by likelihood gain
// count(ab) / (count(a) * count(b)); the vocabulary is specials + every seen
// character (in word-initial and continuation form) + merged units, capped at
// vocab_size. A corpus too small to reach the target returns a smaller
// vocabulary with reached_target = false.
TokenizerModel train_wordpiece(const std::vector<corpus::Document>& docs,
                               std::size_t vocab_size,
                               const WordPieceOptions& options = {});

// Unigram language-model training: seed substrings, EM over the segmentation
// lattice, pruning the least probable pieces each round until the target size
// is reached. Piece probabilities sum to 1 (specials carry a 0.0 placeholder
// and sit outside the distribution).
TokenizerModel train_unigram(const std::vector<corpus::Document>& docs,
                             std::size_t vocab_size,
                             const UnigramOptions& options = {},
                             UnigramTrainLog* log = nullptr);

// WordPiece: greedy longest match per pre-token; unigram: Viterbi-optimal
// segmentation of the marker stream. Text is normalized with the default
// policy first, so decode(encode(x)) == normalize(x) whenever every character
// is covered. Unknown material maps to [UNK]; encode never fails.
std::vector<int> encode(const TokenizerModel& model, std::string_view text);

// Inverse of encode modulo normalization and [UNK] losses. Throws DataError
// naming the id when an id is out of range.
std::string decode(const TokenizerModel& model, const std::vector<int>& ids);

// Groups consecutive token positions into whole words (whitespace-delimited
// units): a WordPiece token without the "##" prefix or a unigram piece
// carrying the word marker starts a new word. Used for whole-word masking.
std::vector<std::pair<std::size_t, std::size_t>> word_spans(
    const TokenizerModel& model, const std::vector<int>& ids);

// Vocabulary file: one token per line, line number == id; the unigram variant
// appends a tab-separated log-probability.
void write_vocab_file(const std::string& path, const TokenizerModel& model);
TokenizerModel read_vocab_file(const std::string& path);

}  // namespace ptlab::tok

#endif  // PTLAB_TOKENIZER_HPP_
