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
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ptlab::data {

namespace {

std::size_t pick_other_document(Rng& rng, std::size_t self,
                                std::size_t doc_count) {
  std::size_t j = static_cast<std::size_t>(rng.next_below(doc_count - 1));
  if (j >= self) ++j;
  return j;
}

}  // namespace

std::vector<SentencePair> pair_sentences(
    const std::vector<corpus::Document>& docs, Objective objective,
    std::uint64_t seed) {
  if (objective == Objective::kNsp && docs.size() < 2) {
    throw DataError(
        "NSP pairing needs at least two documents for the negative pool");
  }
  Rng rng(seed);
  std::vector<SentencePair> out;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto& sents = docs[d].sentences;
    for (std::size_t i = 0; i + 1 < sents.size(); ++i) {
      const bool positive = rng.next_bool();
      if (positive) {
        out.push_back({sents[i], sents[i + 1], PairLabel::kPositive});
      } else if (objective == Objective::kSo) {
        out.push_back({sents[i + 1], sents[i], PairLabel::kNegative});
      } else {
        const std::size_t j = pick_other_document(rng, d, docs.size());
        const auto& pool = docs[j].sentences;
        const auto& random_b =
            pool[static_cast<std::size_t>(rng.next_below(pool.size()))];
        out.push_back({sents[i], random_b, PairLabel::kNegative});
      }
    }
  }
  return out;
}

MaskResult mask_tokens(
    const std::vector<int>& token_ids,
    const std::vector<std::pair<std::size_t, std::size_t>>& word_boundaries,
    double rate, MaskPolicy policy, std::uint64_t rng_seed,
    std::size_t vocab_size, std::size_t max_masked) {
  MaskResult result;
  result.masked_ids = token_ids;
  std::size_t maskable = 0;
  for (const auto& [b, e] : word_boundaries) maskable += e - b;
  if (maskable == 0) return result;

  std::size_t target = static_cast<std::size_t>(
      std::llround(rate * static_cast<double>(maskable)));
  target = std::min(target, max_masked);
  if (target == 0) return result;

  Rng rng(rng_seed);
  std::vector<std::size_t> order(word_boundaries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<std::size_t> positions;
  for (std::size_t wi : order) {
    if (positions.size() >= target) break;
    const auto& [b, e] = word_boundaries[wi];
    if (positions.size() + (e - b) > target) continue;  // would overshoot
    for (std::size_t p = b; p < e; ++p) positions.push_back(p);
  }
  std::sort(positions.begin(), positions.end());

  for (std::size_t p : positions) {
    result.labels.push_back(token_ids[p]);
    int replacement = tok::kMaskId;
    if (policy == MaskPolicy::kBert801010) {
      const double r = rng.next_double();
      if (r < 0.8 || vocab_size <= tok::kNumSpecialTokens) {
        replacement = tok::kMaskId;
      } else if (r < 0.9) {
        replacement = static_cast<int>(
            tok::kNumSpecialTokens +
            rng.next_below(vocab_size - tok::kNumSpecialTokens));
      } else {
        replacement = token_ids[p];  // kept
      }
    }
    result.masked_ids[p] = replacement;
  }
  result.positions = std::move(positions);
  return result;
}

void truncate_pair(std::vector<int>& a, std::vector<int>& b,
                   std::size_t budget) {
  while (a.size() + b.size() > budget) {
    if (a.size() >= b.size()) {
      a.pop_back();
    } else {
      b.pop_back();
    }
  }
}

namespace {

struct TokenizedDoc {
  std::vector<std::vector<int>> sentences;  // non-empty encodings only
};

// Packs consecutive sentences starting at `from` until `token_budget` tokens
// are accumulated (always at least one sentence).
std::vector<int> pack_segment(const TokenizedDoc& doc, std::size_t from,
                              std::size_t token_budget) {
  std::vector<int> out;
  for (std::size_t i = from; i < doc.sentences.size(); ++i) {
    if (!out.empty() && out.size() + doc.sentences[i].size() > token_budget) {
      break;
    }
    out.insert(out.end(), doc.sentences[i].begin(), doc.sentences[i].end());
    if (out.size() >= token_budget) break;
  }
  return out;
}

}  // namespace

BuildResult build_instances(const std::vector<corpus::Document>& docs,
                            const tok::TokenizerModel& tokenizer,
                            const BuildOptions& options) {
  if (options.max_len < 16) {
    throw ConfigError("max_len must be at least 16");
  }
  if (options.objective == Objective::kNsp && docs.size() < 2) {
    throw DataError(
        "NSP instance building needs at least two documents for the "
        "negative pool");
  }

  std::vector<TokenizedDoc> tokenized(docs.size());
  for (std::size_t d = 0; d < docs.size(); ++d) {
    for (const auto& s : docs[d].sentences) {
      std::vector<int> ids = tok::encode(tokenizer, s);
      if (!ids.empty()) tokenized[d].sentences.push_back(std::move(ids));
    }
  }

  const std::size_t budget = options.max_len - 3;  // [CLS] + 2x[SEP]
  const std::size_t cap = max_masked_positions(options.max_len);
  BuildResult result;

  for (std::size_t d = 0; d < docs.size(); ++d) {
    const auto& doc = tokenized[d];
    if (doc.sentences.size() < 2) continue;
    Rng doc_rng = Rng::derive(options.seed, d);
    std::size_t chunk_index = 0;
    std::size_t i = 0;
    while (i < doc.sentences.size()) {
      // Collect a chunk of consecutive sentences that fills the budget.
      std::vector<std::size_t> chunk;
      std::size_t chunk_tokens = 0;
      while (i < doc.sentences.size()) {
        chunk.push_back(i);
        chunk_tokens += doc.sentences[i].size();
        ++i;
        if (chunk_tokens >= budget) break;
      }
      if (chunk.size() < 2) break;  // trailing leftover; cannot form a pair

      const std::size_t split =
          1 + static_cast<std::size_t>(doc_rng.next_below(chunk.size() - 1));
      std::vector<int> seg_a, seg_b;
      for (std::size_t k = 0; k < split; ++k) {
        const auto& s = doc.sentences[chunk[k]];
        seg_a.insert(seg_a.end(), s.begin(), s.end());
      }
      for (std::size_t k = split; k < chunk.size(); ++k) {
        const auto& s = doc.sentences[chunk[k]];
        seg_b.insert(seg_b.end(), s.begin(), s.end());
      }

      const bool positive = doc_rng.next_bool();
      PairLabel label = positive ? PairLabel::kPositive : PairLabel::kNegative;
      if (!positive && options.objective == Objective::kNsp) {
        // Replace B with a random segment from a different document.
        std::size_t j = pick_other_document(doc_rng, d, docs.size());
        // Walk forward to a document that has content.
        std::size_t scanned = 0;
        while (tokenized[j].sentences.empty() && scanned < docs.size()) {
          j = (j + 1) % docs.size();
          if (j == d) j = (j + 1) % docs.size();
          ++scanned;
        }
        if (tokenized[j].sentences.empty()) {
          throw DataError("NSP negative pool has no usable documents");
        }
        const std::size_t start = static_cast<std::size_t>(
            doc_rng.next_below(tokenized[j].sentences.size()));
        seg_b = pack_segment(tokenized[j], start, seg_b.size());
      }

      truncate_pair(seg_a, seg_b, budget);
      if (seg_a.empty() || seg_b.empty()) {
        ++result.skipped_pairs;
        ++chunk_index;
        continue;
      }
      if (!positive && options.objective == Objective::kSo) {
        std::swap(seg_a, seg_b);  // exact transposition of the positive pair
      }

      PretrainInstance inst;
      inst.max_len = options.max_len;
      inst.pair_label = label;
      inst.token_ids.push_back(tok::kClsId);
      inst.segment_ids.push_back(0);
      std::vector<std::pair<std::size_t, std::size_t>> spans;
      auto append_segment = [&](const std::vector<int>& seg, int seg_id) {
        const std::size_t base = inst.token_ids.size();
        for (const auto& span : tok::word_spans(tokenizer, seg)) {
          spans.emplace_back(base + span.first, base + span.second);
        }
        inst.token_ids.insert(inst.token_ids.end(), seg.begin(), seg.end());
        inst.token_ids.push_back(tok::kSepId);
        inst.segment_ids.insert(inst.segment_ids.end(), seg.size() + 1,
                                seg_id);
      };
      append_segment(seg_a, 0);
      append_segment(seg_b, 1);

      Rng mask_rng = Rng::derive(options.seed, d, chunk_index + 1);
      std::uint64_t mask_seed = mask_rng.next_u64();
      MaskResult masked =
          mask_tokens(inst.token_ids, spans, options.mask_rate,
                      options.mask_policy, mask_seed, tokenizer.vocab_size(),
                      cap);
      inst.masked_positions = std::move(masked.positions);
      inst.masked_labels = std::move(masked.labels);
      inst.token_ids = std::move(masked.masked_ids);

      result.instances.push_back(std::move(inst));
      ++chunk_index;
    }
  }
  return result;
}

bool whole_word_property_holds(const PretrainInstance& instance,
                               const tok::TokenizerModel& tokenizer) {
  // Restore the original ids, then group into words per segment.
  std::vector<int> original = instance.token_ids;
  for (std::size_t k = 0; k < instance.masked_positions.size(); ++k) {
    original[instance.masked_positions[k]] = instance.masked_labels[k];
  }
  std::vector<bool> is_masked(original.size(), false);
  for (std::size_t p : instance.masked_positions) is_masked[p] = true;

  std::size_t pos = 0;
  while (pos < original.size()) {
    if (original[pos] == tok::kClsId || original[pos] == tok::kSepId) {
      if (is_masked[pos]) return false;
      ++pos;
      continue;
    }
    std::size_t end = pos;
    while (end < original.size() && original[end] != tok::kSepId &&
           original[end] != tok::kClsId) {
      ++end;
    }
    std::vector<int> segment(original.begin() + static_cast<std::ptrdiff_t>(pos),
                             original.begin() + static_cast<std::ptrdiff_t>(end));
    for (const auto& [b, e] : tok::word_spans(tokenizer, segment)) {
      bool any = false, all = true;
      for (std::size_t p = b; p < e; ++p) {
        if (is_masked[pos + p]) {
          any = true;
        } else {
          all = false;
        }
      }
      if (any && !all) return false;
    }
    pos = end;
  }
  return true;
}

void write_instances_jsonl(const std::string& path,
                           const std::vector<PretrainInstance>& instances) {
  std::ostringstream out;
  for (const auto& inst : instances) {
    nlohmann::json j;
    j["token_ids"] = inst.token_ids;
    j["segment_ids"] = inst.segment_ids;
    j["masked_positions"] = inst.masked_positions;
    j["masked_labels"] = inst.masked_labels;
    j["pair_label"] =
        inst.pair_label == PairLabel::kPositive ? "positive" : "negative";
    j["max_len"] = inst.max_len;
    out << j.dump() << '\n';
  }
  write_file(path, out.str());
}

std::vector<PretrainInstance> read_instances_jsonl(const std::string& path) {
  const std::string raw = read_file(path);
  std::vector<PretrainInstance> out;
  std::istringstream in(raw);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("bad instance record at line " + std::to_string(line_no) +
                      ": " + e.what());
    }
    PretrainInstance inst;
    inst.token_ids = j.at("token_ids").get<std::vector<int>>();
    inst.segment_ids = j.at("segment_ids").get<std::vector<int>>();
    inst.masked_positions =
        j.at("masked_positions").get<std::vector<std::size_t>>();
    inst.masked_labels = j.at("masked_labels").get<std::vector<int>>();
    const std::string label = j.at("pair_label").get<std::string>();
    if (label != "positive" && label != "negative") {
      throw DataError("bad pair_label at line " + std::to_string(line_no));
    }
    inst.pair_label =
        label == "positive" ? PairLabel::kPositive : PairLabel::kNegative;
    inst.max_len = j.at("max_len").get<std::size_t>();
    if (inst.token_ids.size() != inst.segment_ids.size() ||
        inst.token_ids.size() > inst.max_len ||
        inst.masked_positions.size() != inst.masked_labels.size()) {
      throw DataError("inconsistent instance at line " +
                      std::to_string(line_no));
    }
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace ptlab::data
