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

#include "ptlab/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <unordered_set>

#include "ptlab/common.hpp"

namespace ptlab::tok {

const char* const kSpecialTokenLiterals[kNumSpecialTokens] = {
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};

namespace {

const corpus::NormalizationPolicy kDefaultPolicy{};

bool is_punct_cp(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
           (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
  }
  if (cp == 0x00A1 || cp == 0x00AB || cp == 0x00BB || cp == 0x00BF) return true;
  if (cp >= 0x2010 && cp <= 0x2027) return true;   // dashes, quotes, ellipsis
  if (cp >= 0x2030 && cp <= 0x205E) return true;
  return false;
}

std::size_t cp_length(const std::string& s) { return utf8_decode(s).size(); }

// A pre-token: a maximal run of non-punctuation characters, or a single
// punctuation character. `continuation` is true when the unit was directly
// attached to the previous unit of the same word, so that decoding can put
// the characters back without a space.
struct Unit {
  std::string text;
  bool continuation = false;
};

std::vector<Unit> pretokenize(const std::string& normalized) {
  std::vector<Unit> units;
  const std::vector<char32_t> cps = utf8_decode(normalized);
  std::size_t i = 0;
  const std::size_t n = cps.size();
  while (i < n) {
    if (cps[i] == U' ') {
      ++i;
      continue;
    }
    bool word_start = (i == 0) || cps[i - 1] == U' ';
    if (is_punct_cp(cps[i])) {
      std::string t;
      utf8_append(t, cps[i]);
      units.push_back({std::move(t), !word_start});
      ++i;
      continue;
    }
    std::string t;
    while (i < n && cps[i] != U' ' && !is_punct_cp(cps[i])) {
      utf8_append(t, cps[i]);
      ++i;
    }
    units.push_back({std::move(t), !word_start});
  }
  return units;
}

// ---------------------------------------------------------------------------
// WordPiece training
// ---------------------------------------------------------------------------

using Pair = std::uint64_t;
inline Pair make_pair_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
         static_cast<std::uint32_t>(b);
}

struct HeapEntry {
  double score;
  std::uint64_t pair_count;
  int left, right;
  // Snapshot of the counts the score was computed from; stale entries get
  // revalidated when popped.
  std::uint64_t left_count, right_count;
};

struct WordState {
  std::vector<int> symbols;
  std::uint64_t freq;
};

class WordPieceTrainer {
 public:
  WordPieceTrainer(const std::vector<corpus::Document>& docs,
                   std::size_t vocab_size, const WordPieceOptions& options)
      : target_(vocab_size), options_(options) {
    collect_units(docs);
    build_alphabet();
    if (target_ < kNumSpecialTokens + alphabet_.size()) {
      throw ConfigError(
          "vocab size " + std::to_string(target_) +
          " is smaller than specials + alphabet (" +
          std::to_string(kNumSpecialTokens + alphabet_.size()) + ")");
    }
    init_symbol_table();
  }

  TokenizerModel train() {
    count_all_pairs();
    for (const auto& [key, cnt] : pair_counts_) push_heap_entry(key, cnt);

    std::vector<int> merged_order;
    while (vocab_count() + merged_order.size() < target_ && !heap_.empty()) {
      HeapEntry top = heap_.top();
      heap_.pop();
      const Pair key = make_pair_key(top.left, top.right);
      auto it = pair_counts_.find(key);
      const std::uint64_t cur = it == pair_counts_.end() ? 0 : it->second;
      if (cur < options_.min_pair_count) continue;
      if (cur != top.pair_count || symbol_count_[top.left] != top.left_count ||
          symbol_count_[top.right] != top.right_count) {
        push_heap_entry(key, cur);  // refresh with current counts
        continue;
      }
      const int merged = merge_pair(top.left, top.right);
      if (merged >= 0) merged_order.push_back(merged);
    }

    TokenizerModel model;
    model.algorithm = Algorithm::kWordPiece;
    for (int s = 0; s < kNumSpecialTokens; ++s) {
      add_token(model, kSpecialTokenLiterals[s]);
    }
    for (const auto& a : alphabet_) add_token(model, a);
    for (int sym : merged_order) add_token(model, symbol_text_[sym]);
    model.reached_target = model.id_to_token.size() == target_;
    for (const auto& t : model.id_to_token) {
      model.max_piece_cps = std::max(model.max_piece_cps, cp_length(t));
    }
    return model;
  }

 private:
  std::size_t vocab_count() const {
    return kNumSpecialTokens + alphabet_.size();
  }

  static void add_token(TokenizerModel& model, const std::string& t) {
    model.token_to_id.emplace(t, static_cast<int>(model.id_to_token.size()));
    model.id_to_token.push_back(t);
  }

  void collect_units(const std::vector<corpus::Document>& docs) {
    std::map<std::pair<bool, std::string>, std::uint64_t> counts;
    for (const auto& doc : docs) {
      for (const auto& sentence : doc.sentences) {
        const std::string norm = corpus::normalize(sentence, kDefaultPolicy);
        for (const auto& unit : pretokenize(norm)) {
          ++counts[{unit.continuation, unit.text}];
        }
      }
    }
    if (counts.empty()) throw DataError("tokenizer training corpus is empty");
    units_.reserve(counts.size());
    for (const auto& [key, freq] : counts) {
      units_.push_back({key.second, key.first, freq});
    }
  }

  void build_alphabet() {
    std::unordered_set<char32_t> seen;
    for (const auto& u : units_) {
      for (char32_t cp : utf8_decode(u.text)) seen.insert(cp);
    }
    std::vector<char32_t> chars(seen.begin(), seen.end());
    std::sort(chars.begin(), chars.end());
    for (char32_t cp : chars) {
      std::string plain;
      utf8_append(plain, cp);
      alphabet_.push_back(plain);
      alphabet_.push_back(kContinuation + plain);
    }
  }

  int intern(const std::string& text) {
    auto it = symbol_ids_.find(text);
    if (it != symbol_ids_.end()) return it->second;
    const int id = static_cast<int>(symbol_text_.size());
    symbol_ids_.emplace(text, id);
    symbol_text_.push_back(text);
    symbol_count_.push_back(0);
    return id;
  }

  void init_symbol_table() {
    for (const auto& a : alphabet_) intern(a);
    words_.reserve(units_.size());
    for (const auto& u : units_) {
      WordState w;
      w.freq = u.freq;
      const auto cps = utf8_decode(u.text);
      for (std::size_t i = 0; i < cps.size(); ++i) {
        std::string piece;
        if (i > 0 || u.continuation) piece = kContinuation;
        utf8_append(piece, cps[i]);
        const int sym = intern(piece);
        w.symbols.push_back(sym);
        symbol_count_[static_cast<std::size_t>(sym)] += w.freq;
      }
      words_.push_back(std::move(w));
    }
  }

  void count_all_pairs() {
    for (std::size_t wi = 0; wi < words_.size(); ++wi) {
      const auto& w = words_[wi];
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        const Pair key = make_pair_key(w.symbols[i], w.symbols[i + 1]);
        pair_counts_[key] += w.freq;
        pair_words_[key].push_back(wi);
      }
    }
  }

  double pair_score(std::uint64_t pair_count, std::uint64_t lc,
                    std::uint64_t rc) const {
    return static_cast<double>(pair_count) /
           (static_cast<double>(lc) * static_cast<double>(rc));
  }

  void push_heap_entry(Pair key, std::uint64_t count) {
    if (count < options_.min_pair_count) return;
    const int left = static_cast<int>(key >> 32);
    const int right = static_cast<int>(key & 0xFFFFFFFFu);
    const std::uint64_t lc = symbol_count_[static_cast<std::size_t>(left)];
    const std::uint64_t rc = symbol_count_[static_cast<std::size_t>(right)];
    if (lc == 0 || rc == 0) return;
    heap_.push({pair_score(count, lc, rc), count, left, right, lc, rc});
  }

  void bump_pair(Pair key, std::uint64_t delta, std::size_t word_index,
                 bool record) {
    auto& slot = pair_counts_[key];
    slot += delta;
    if (record) pair_words_[key].push_back(word_index);
    push_heap_entry(key, slot);
  }

  void drop_pair(Pair key, std::uint64_t delta) {
    auto it = pair_counts_.find(key);
    if (it == pair_counts_.end()) return;
    it->second = it->second >= delta ? it->second - delta : 0;
  }

  // Applies the merge (left,right) -> concatenated symbol across all words
  // containing the pair, updating counts incrementally. Returns the merged
  // symbol id, or -1 if the merged text was already a known vocab symbol.
  int merge_pair(int left, int right) {
    const Pair key = make_pair_key(left, right);
    std::string merged_text = symbol_text_[static_cast<std::size_t>(left)];
    std::string rtext = symbol_text_[static_cast<std::size_t>(right)];
    if (rtext.rfind(kContinuation, 0) == 0) rtext = rtext.substr(2);
    merged_text += rtext;
    const bool existed = symbol_ids_.count(merged_text) > 0;
    const int merged = intern(merged_text);

    auto words_it = pair_words_.find(key);
    if (words_it == pair_words_.end()) return -1;
    std::vector<std::size_t> candidates = std::move(words_it->second);
    pair_words_.erase(words_it);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()),
                     candidates.end());

    for (std::size_t wi : candidates) {
      auto& w = words_[wi];
      auto& s = w.symbols;
      const std::uint64_t f = w.freq;
      std::size_t i = 0;
      while (i + 1 < s.size()) {
        if (s[i] != left || s[i + 1] != right) {
          ++i;
          continue;
        }
        if (i > 0) {
          drop_pair(make_pair_key(s[i - 1], left), f);
        }
        if (i + 2 < s.size()) {
          drop_pair(make_pair_key(right, s[i + 2]), f);
        }
        drop_pair(key, f);
        symbol_count_[static_cast<std::size_t>(left)] -= f;
        symbol_count_[static_cast<std::size_t>(right)] -= f;
        symbol_count_[static_cast<std::size_t>(merged)] += f;
        s[i] = merged;
        s.erase(s.begin() + static_cast<std::ptrdiff_t>(i) + 1);
        if (i > 0) {
          bump_pair(make_pair_key(s[i - 1], merged), f, wi, true);
        }
        if (i + 1 < s.size()) {
          bump_pair(make_pair_key(merged, s[i + 1]), f, wi, true);
        }
        ++i;
      }
    }
    // Counts of the merged pair's own constituents changed; peers involving
    // them revalidate lazily when popped.
    return existed ? -1 : merged;
  }

  struct EntryCompare {
    const std::vector<std::string>* texts;
    bool operator()(const HeapEntry& a, const HeapEntry& b) const {
      if (a.score != b.score) return a.score < b.score;
      if (a.pair_count != b.pair_count) return a.pair_count < b.pair_count;
      const auto& ta = (*texts)[static_cast<std::size_t>(a.left)];
      const auto& tb = (*texts)[static_cast<std::size_t>(b.left)];
      if (ta != tb) return ta > tb;  // lexicographically smaller first
      return (*texts)[static_cast<std::size_t>(a.right)] >
             (*texts)[static_cast<std::size_t>(b.right)];
    }
  };

  struct RawUnit {
    std::string text;
    bool continuation;
    std::uint64_t freq;
  };

  std::size_t target_;
  WordPieceOptions options_;
  std::vector<RawUnit> units_;
  std::vector<std::string> alphabet_;
  std::unordered_map<std::string, int> symbol_ids_;
  std::vector<std::string> symbol_text_;
  std::vector<std::uint64_t> symbol_count_;
  std::vector<WordState> words_;
  std::unordered_map<Pair, std::uint64_t> pair_counts_;
  std::unordered_map<Pair, std::vector<std::size_t>> pair_words_;
  std::priority_queue<HeapEntry, std::vector<HeapEntry>, EntryCompare> heap_{
      EntryCompare{&symbol_text_}};
};

// ---------------------------------------------------------------------------
// Unigram training
// ---------------------------------------------------------------------------

std::vector<char32_t> to_marker_stream(const std::string& normalized) {
  std::vector<char32_t> cps = utf8_decode(normalized);
  for (auto& cp : cps) {
    if (cp == U' ') cp = kWordMarker;
  }
  return cps;
}

double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

class UnigramTrainer {
 public:
  UnigramTrainer(const std::vector<corpus::Document>& docs,
                 std::size_t vocab_size, const UnigramOptions& options,
                 UnigramTrainLog* log)
      : target_(vocab_size), options_(options), log_(log) {
    for (const auto& doc : docs) {
      for (const auto& sentence : doc.sentences) {
        std::string norm = corpus::normalize(sentence, kDefaultPolicy);
        if (norm.empty()) continue;
        sentences_.push_back(to_marker_stream(norm));
      }
    }
    if (sentences_.empty()) {
      throw DataError("tokenizer training corpus is empty");
    }
  }

  TokenizerModel train() {
    seed_pieces();
    const std::size_t content_target =
        target_ > kNumSpecialTokens ? target_ - kNumSpecialTokens : 0;
    if (content_target < required_.size()) {
      throw ConfigError("vocab size " + std::to_string(target_) +
                        " is smaller than specials + alphabet (" +
                        std::to_string(kNumSpecialTokens + required_.size()) +
                        ")");
    }
    bool done = false;
    while (!done) {
      std::vector<double> lls;
      for (int it = 0; it < options_.em_iterations_per_round; ++it) {
        lls.push_back(em_iteration());
      }
      if (log_) log_->round_log_likelihood.push_back(lls);
      done = pieces_.size() <= content_target;
      if (!done) prune(content_target);
    }

    TokenizerModel model;
    model.algorithm = Algorithm::kUnigram;
    for (int s = 0; s < kNumSpecialTokens; ++s) {
      model.token_to_id.emplace(kSpecialTokenLiterals[s],
                                static_cast<int>(model.id_to_token.size()));
      model.id_to_token.push_back(kSpecialTokenLiterals[s]);
      model.log_probs.push_back(0.0);  // placeholder; outside the distribution
    }
    // Deterministic order: by descending probability, ties by string.
    std::vector<std::size_t> order(pieces_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (log_probs_[a] != log_probs_[b]) return log_probs_[a] > log_probs_[b];
      return pieces_[a] < pieces_[b];
    });
    for (std::size_t i : order) {
      model.token_to_id.emplace(pieces_[i],
                                static_cast<int>(model.id_to_token.size()));
      model.id_to_token.push_back(pieces_[i]);
      model.log_probs.push_back(log_probs_[i]);
    }
    model.reached_target = model.id_to_token.size() == target_;
    for (const auto& t : model.id_to_token) {
      model.max_piece_cps = std::max(model.max_piece_cps, cp_length(t));
    }
    return model;
  }

 private:
  // Candidate pieces: every substring up to max_piece_cps with the word
  // marker allowed only in leading position, capped at seed_factor * target
  // by count * length; plus every single character (always kept).
  void seed_pieces() {
    std::map<std::u32string, std::uint64_t> counts;
    for (const auto& s : sentences_) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        const std::size_t max_len =
            std::min(options_.max_piece_cps, s.size() - i);
        for (std::size_t len = 1; len <= max_len; ++len) {
          if (len > 1 && s[i + len - 1] == kWordMarker) break;
          counts[std::u32string(s.begin() + static_cast<std::ptrdiff_t>(i),
                                s.begin() +
                                    static_cast<std::ptrdiff_t>(i + len))] +=
              1;
        }
      }
    }
    std::vector<std::pair<std::u32string, std::uint64_t>> multi;
    for (const auto& [piece, count] : counts) {
      if (piece.size() == 1) {
        required_.push_back(piece);
      } else if (count >= 2) {
        multi.emplace_back(piece, count);
      }
    }
    std::sort(multi.begin(), multi.end(), [](const auto& a, const auto& b) {
      const std::uint64_t sa = a.second * a.first.size();
      const std::uint64_t sb = b.second * b.first.size();
      if (sa != sb) return sa > sb;
      return a.first < b.first;
    });
    const std::size_t budget = options_.seed_factor * target_;
    if (multi.size() + required_.size() > budget) {
      multi.resize(budget > required_.size() ? budget - required_.size() : 0);
    }

    double total = 0;
    for (const auto& p : required_) {
      pieces32_.push_back(p);
      raw_counts_.push_back(static_cast<double>(counts[p]));
      total += raw_counts_.back();
    }
    for (const auto& [piece, count] : multi) {
      pieces32_.push_back(piece);
      raw_counts_.push_back(static_cast<double>(count));
      total += raw_counts_.back();
    }
    log_probs_.resize(pieces32_.size());
    for (std::size_t i = 0; i < pieces32_.size(); ++i) {
      log_probs_[i] = std::log(raw_counts_[i] / total);
    }
    rebuild_lookup();
  }

  void rebuild_lookup() {
    lookup_.clear();
    pieces_.clear();
    pieces_.reserve(pieces32_.size());
    max_len_ = 1;
    for (std::size_t i = 0; i < pieces32_.size(); ++i) {
      pieces_.push_back(utf8_encode(std::vector<char32_t>(
          pieces32_[i].begin(), pieces32_[i].end())));
      lookup_[pieces32_[i]] = i;
      max_len_ = std::max(max_len_, pieces32_[i].size());
    }
  }

  // One full EM pass: expected piece counts via the forward-backward lattice,
  // then re-normalization. Returns the corpus log-likelihood under the piece
  // probabilities in effect during the pass.
  double em_iteration() {
    std::vector<double> expected(pieces32_.size(), 0.0);
    double corpus_ll = 0.0;
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    for (const auto& s : sentences_) {
      const std::size_t n = s.size();
      std::vector<double> alpha(n + 1, kNegInf), beta(n + 1, kNegInf);
      alpha[0] = 0.0;
      beta[n] = 0.0;
      // Edges are recomputed in both sweeps; piece lookup is the hot path.
      for (std::size_t i = 0; i < n; ++i) {
        if (alpha[i] == kNegInf) continue;
        const std::size_t lim = std::min(max_len_, n - i);
        for (std::size_t len = 1; len <= lim; ++len) {
          if (len > 1 && s[i + len - 1] == kWordMarker) break;
          auto it = lookup_.find(
              std::u32string(s.begin() + static_cast<std::ptrdiff_t>(i),
                             s.begin() + static_cast<std::ptrdiff_t>(i + len)));
          if (it == lookup_.end()) continue;
          alpha[i + len] = log_sum_exp(alpha[i + len],
                                       alpha[i] + log_probs_[it->second]);
        }
      }
      if (alpha[n] == kNegInf) continue;  // unreachable sentence
      for (std::size_t i = n; i-- > 0;) {
        const std::size_t lim = std::min(max_len_, n - i);
        for (std::size_t len = 1; len <= lim; ++len) {
          if (len > 1 && s[i + len - 1] == kWordMarker) break;
          auto it = lookup_.find(
              std::u32string(s.begin() + static_cast<std::ptrdiff_t>(i),
                             s.begin() + static_cast<std::ptrdiff_t>(i + len)));
          if (it == lookup_.end()) continue;
          if (beta[i + len] == kNegInf) continue;
          beta[i] = log_sum_exp(beta[i], log_probs_[it->second] + beta[i + len]);
        }
      }
      const double total = alpha[n];
      corpus_ll += total;
      for (std::size_t i = 0; i < n; ++i) {
        if (alpha[i] == kNegInf) continue;
        const std::size_t lim = std::min(max_len_, n - i);
        for (std::size_t len = 1; len <= lim; ++len) {
          if (len > 1 && s[i + len - 1] == kWordMarker) break;
          auto it = lookup_.find(
              std::u32string(s.begin() + static_cast<std::ptrdiff_t>(i),
                             s.begin() + static_cast<std::ptrdiff_t>(i + len)));
          if (it == lookup_.end()) continue;
          if (beta[i + len] == kNegInf) continue;
          expected[it->second] += std::exp(
              alpha[i] + log_probs_[it->second] + beta[i + len] - total);
        }
      }
    }
    double total_expected = 0.0;
    for (double& e : expected) {
      if (e < 1e-12) e = 1e-12;  // keep required characters representable
      total_expected += e;
    }
    for (std::size_t i = 0; i < pieces32_.size(); ++i) {
      log_probs_[i] = std::log(expected[i] / total_expected);
    }
    return corpus_ll;
  }

  void prune(std::size_t content_target) {
    const std::size_t required = required_.size();
    std::vector<std::size_t> removable;
    for (std::size_t i = required; i < pieces32_.size(); ++i) {
      removable.push_back(i);
    }
    std::sort(removable.begin(), removable.end(),
              [&](std::size_t a, std::size_t b) {
                if (log_probs_[a] != log_probs_[b]) {
                  return log_probs_[a] < log_probs_[b];
                }
                return pieces32_[a] > pieces32_[b];
              });
    std::size_t drop = static_cast<std::size_t>(
        std::ceil(static_cast<double>(pieces32_.size()) *
                  options_.prune_fraction));
    drop = std::min(drop, pieces32_.size() - content_target);
    drop = std::min(drop, removable.size());
    std::unordered_set<std::size_t> dropped(removable.begin(),
                                            removable.begin() +
                                                static_cast<std::ptrdiff_t>(drop));
    std::vector<std::u32string> kept;
    std::vector<double> kept_counts, kept_logp;
    double mass = 0.0;
    for (std::size_t i = 0; i < pieces32_.size(); ++i) {
      if (dropped.count(i)) continue;
      kept.push_back(pieces32_[i]);
      kept_logp.push_back(log_probs_[i]);
      mass += std::exp(log_probs_[i]);
    }
    pieces32_ = std::move(kept);
    log_probs_ = std::move(kept_logp);
    const double log_mass = std::log(mass);
    for (double& lp : log_probs_) lp -= log_mass;
    rebuild_lookup();
  }

  std::size_t target_;
  UnigramOptions options_;
  UnigramTrainLog* log_;
  std::vector<std::vector<char32_t>> sentences_;
  std::vector<std::u32string> required_;  // single characters
  std::vector<std::u32string> pieces32_;
  std::vector<std::string> pieces_;
  std::vector<double> raw_counts_;
  std::vector<double> log_probs_;
  std::map<std::u32string, std::size_t> lookup_;
  std::size_t max_len_ = 1;
};

// ---------------------------------------------------------------------------
// Encoding / decoding
// ---------------------------------------------------------------------------

void encode_wordpiece_unit(const TokenizerModel& model, const Unit& unit,
                           std::size_t max_word_cps, std::vector<int>& out) {
  const std::vector<char32_t> cps = utf8_decode(unit.text);
  if (cps.size() > max_word_cps) {
    out.push_back(kUnkId);
    return;
  }
  std::vector<int> pieces;
  std::size_t start = 0;
  while (start < cps.size()) {
    const bool needs_prefix = start > 0 || unit.continuation;
    std::size_t len = cps.size() - start;
    int found = -1;
    while (len > 0) {
      std::string candidate = needs_prefix ? kContinuation : "";
      for (std::size_t k = 0; k < len; ++k) utf8_append(candidate, cps[start + k]);
      found = model.lookup(candidate);
      if (found >= 0) break;
      --len;
    }
    if (found < 0) {
      out.push_back(kUnkId);  // whole unit becomes [UNK]
      return;
    }
    pieces.push_back(found);
    start += len;
  }
  out.insert(out.end(), pieces.begin(), pieces.end());
}

std::vector<int> encode_unigram(const TokenizerModel& model,
                                const std::string& normalized) {
  const std::vector<char32_t> stream = to_marker_stream(normalized);
  const std::size_t n = stream.size();
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  // Unknown characters segment as single-position [UNK] edges with a penalty
  // below every real piece, so encoding is total.
  double unk_logp = -1e4;
  std::vector<double> best(n + 1, kNegInf);
  std::vector<int> back_id(n + 1, -1);
  std::vector<std::size_t> back_from(n + 1, 0);
  best[0] = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (best[i] == kNegInf) continue;
    const std::size_t lim = std::min(model.max_piece_cps, n - i);
    bool any = false;
    std::string candidate;
    for (std::size_t len = 1; len <= lim; ++len) {
      if (len > 1 && stream[i + len - 1] == kWordMarker) break;
      utf8_append(candidate, stream[i + len - 1]);
      const int id = model.lookup(candidate);
      if (id < kNumSpecialTokens) continue;  // specials never match text
      any = true;
      const double score = best[i] + model.log_probs[static_cast<std::size_t>(id)];
      if (score > best[i + len]) {
        best[i + len] = score;
        back_id[i + len] = id;
        back_from[i + len] = i;
      }
    }
    if (!any || best[i + 1] == kNegInf) {
      const double score = best[i] + unk_logp;
      if (score > best[i + 1]) {
        best[i + 1] = score;
        back_id[i + 1] = kUnkId;
        back_from[i + 1] = i;
      }
    }
  }
  std::vector<int> rev;
  std::size_t pos = n;
  while (pos > 0) {
    rev.push_back(back_id[pos]);
    pos = back_from[pos];
  }
  std::reverse(rev.begin(), rev.end());
  // Merge adjacent [UNK]s produced by runs of unknown characters.
  std::vector<int> out;
  for (int id : rev) {
    if (id == kUnkId && !out.empty() && out.back() == kUnkId) continue;
    out.push_back(id);
  }
  return out;
}

}  // namespace

TokenizerModel train_wordpiece(const std::vector<corpus::Document>& docs,
                               std::size_t vocab_size,
                               const WordPieceOptions& options) {
  return WordPieceTrainer(docs, vocab_size, options).train();
}

TokenizerModel train_unigram(const std::vector<corpus::Document>& docs,
                             std::size_t vocab_size,
                             const UnigramOptions& options,
                             UnigramTrainLog* log) {
  return UnigramTrainer(docs, vocab_size, options, log).train();
}

std::vector<int> encode(const TokenizerModel& model, std::string_view text) {
  const std::string norm = corpus::normalize(text, kDefaultPolicy);
  std::vector<int> out;
  if (norm.empty()) return out;
  if (model.algorithm == Algorithm::kWordPiece) {
    for (const auto& unit : pretokenize(norm)) {
      encode_wordpiece_unit(model, unit, WordPieceOptions{}.max_word_cps, out);
    }
  } else {
    out = encode_unigram(model, norm);
  }
  return out;
}

std::string decode(const TokenizerModel& model, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= model.id_to_token.size()) {
      throw DataError("token id out of range: " + std::to_string(id));
    }
    const std::string& token = model.id_to_token[static_cast<std::size_t>(id)];
    if (model.algorithm == Algorithm::kWordPiece) {
      const bool continuation = token.rfind(kContinuation, 0) == 0 &&
                                id >= kNumSpecialTokens;
      if (continuation) {
        out += token.substr(2);
      } else {
        if (!out.empty()) out.push_back(' ');
        out += token;
      }
    } else {
      if (id < kNumSpecialTokens) {
        if (!out.empty() && out.back() != ' ') out.push_back(' ');
        out += token;
        continue;
      }
      const std::vector<char32_t> cps = utf8_decode(token);
      for (char32_t cp : cps) {
        if (cp == kWordMarker) {
          out.push_back(' ');
        } else {
          utf8_append(out, cp);
        }
      }
    }
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> word_spans(
    const TokenizerModel& model, const std::vector<int>& ids) {
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    const std::string& token =
        (id >= 0 && static_cast<std::size_t>(id) < model.id_to_token.size())
            ? model.id_to_token[static_cast<std::size_t>(id)]
            : std::string();
    bool continues;
    if (model.algorithm == Algorithm::kWordPiece) {
      continues = token.rfind(kContinuation, 0) == 0 && id >= kNumSpecialTokens;
    } else {
      // Unigram: a piece starting with the word marker begins a new word.
      const bool marker = !token.empty() &&
                          utf8_decode(token).front() == kWordMarker;
      continues = !marker && i > 0;
      if (id < kNumSpecialTokens) continues = false;
      if (i > 0 && ids[i - 1] < kNumSpecialTokens) continues = false;
    }
    if (continues && !spans.empty()) {
      spans.back().second = i + 1;
    } else {
      spans.emplace_back(i, i + 1);
    }
  }
  return spans;
}

void write_vocab_file(const std::string& path, const TokenizerModel& model) {
  std::ostringstream out;
  out.precision(17);  // log-probabilities survive the round-trip
  for (std::size_t i = 0; i < model.id_to_token.size(); ++i) {
    out << model.id_to_token[i];
    if (model.algorithm == Algorithm::kUnigram) {
      out << '\t' << model.log_probs[i];
    }
    out << '\n';
  }
  write_file(path, out.str());
}

TokenizerModel read_vocab_file(const std::string& path) {
  const std::string raw = read_file(path);
  TokenizerModel model;
  bool any_logprob = false;
  std::istringstream in(raw);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    std::string token = line.substr(0, tab);
    double logp = 0.0;
    if (tab != std::string::npos) {
      any_logprob = true;
      logp = std::stod(line.substr(tab + 1));
    }
    if (token.empty()) {
      throw DataError("empty token at line " +
                      std::to_string(model.id_to_token.size() + 1) + " in " +
                      path);
    }
    model.token_to_id.emplace(token,
                              static_cast<int>(model.id_to_token.size()));
    model.id_to_token.push_back(token);
    model.log_probs.push_back(logp);
  }
  if (model.id_to_token.size() < kNumSpecialTokens) {
    throw DataError("vocabulary file too small: " + path);
  }
  for (int s = 0; s < kNumSpecialTokens; ++s) {
    if (model.id_to_token[static_cast<std::size_t>(s)] !=
        kSpecialTokenLiterals[s]) {
      throw DataError("vocabulary file missing special token " +
                      std::string(kSpecialTokenLiterals[s]) + " at id " +
                      std::to_string(s));
    }
  }
  model.algorithm = any_logprob ? Algorithm::kUnigram : Algorithm::kWordPiece;
  if (!any_logprob) model.log_probs.clear();
  for (const auto& t : model.id_to_token) {
    model.max_piece_cps = std::max(model.max_piece_cps, cp_length(t));
  }
  return model;
}

}  // namespace ptlab::tok
