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

#include "ptlab/corpus.hpp"

#include <algorithm>
#include <array>
#include <unordered_map>
#include <unordered_set>

#include "ptlab/common.hpp"

namespace ptlab::corpus {
namespace {

struct Decomposition {
  char32_t composed;
  char32_t base;
  char32_t mark;
};

// Canonical decompositions for the Latin repertoire this pipeline supports:
// Latin-1 Supplement plus the Latin Extended-A letters that occur in European
// text. Combining marks are in U+0300..U+036F.
constexpr std::array<Decomposition, 97> kDecompositions = {{
    {0x00C0, U'A', 0x0300}, {0x00C1, U'A', 0x0301}, {0x00C2, U'A', 0x0302},
    {0x00C3, U'A', 0x0303}, {0x00C4, U'A', 0x0308}, {0x00C5, U'A', 0x030A},
    {0x00C7, U'C', 0x0327}, {0x00C8, U'E', 0x0300}, {0x00C9, U'E', 0x0301},
    {0x00CA, U'E', 0x0302}, {0x00CB, U'E', 0x0308}, {0x00CC, U'I', 0x0300},
    {0x00CD, U'I', 0x0301}, {0x00CE, U'I', 0x0302}, {0x00CF, U'I', 0x0308},
    {0x00D1, U'N', 0x0303}, {0x00D2, U'O', 0x0300}, {0x00D3, U'O', 0x0301},
    {0x00D4, U'O', 0x0302}, {0x00D5, U'O', 0x0303}, {0x00D6, U'O', 0x0308},
    {0x00D9, U'U', 0x0300}, {0x00DA, U'U', 0x0301}, {0x00DB, U'U', 0x0302},
    {0x00DC, U'U', 0x0308}, {0x00DD, U'Y', 0x0301},
    {0x00E0, U'a', 0x0300}, {0x00E1, U'a', 0x0301}, {0x00E2, U'a', 0x0302},
    {0x00E3, U'a', 0x0303}, {0x00E4, U'a', 0x0308}, {0x00E5, U'a', 0x030A},
    {0x00E7, U'c', 0x0327}, {0x00E8, U'e', 0x0300}, {0x00E9, U'e', 0x0301},
    {0x00EA, U'e', 0x0302}, {0x00EB, U'e', 0x0308}, {0x00EC, U'i', 0x0300},
    {0x00ED, U'i', 0x0301}, {0x00EE, U'i', 0x0302}, {0x00EF, U'i', 0x0308},
    {0x00F1, U'n', 0x0303}, {0x00F2, U'o', 0x0300}, {0x00F3, U'o', 0x0301},
    {0x00F4, U'o', 0x0302}, {0x00F5, U'o', 0x0303}, {0x00F6, U'o', 0x0308},
    {0x00F9, U'u', 0x0300}, {0x00FA, U'u', 0x0301}, {0x00FB, U'u', 0x0302},
    {0x00FC, U'u', 0x0308}, {0x00FD, U'y', 0x0301}, {0x00FF, U'y', 0x0308},
    // Latin Extended-A (subset).
    {0x0100, U'A', 0x0304}, {0x0101, U'a', 0x0304}, {0x0102, U'A', 0x0306},
    {0x0103, U'a', 0x0306}, {0x0104, U'A', 0x0328}, {0x0105, U'a', 0x0328},
    {0x0106, U'C', 0x0301}, {0x0107, U'c', 0x0301}, {0x010C, U'C', 0x030C},
    {0x010D, U'c', 0x030C}, {0x0112, U'E', 0x0304}, {0x0113, U'e', 0x0304},
    {0x0118, U'E', 0x0328}, {0x0119, U'e', 0x0328}, {0x011A, U'E', 0x030C},
    {0x011B, U'e', 0x030C}, {0x011E, U'G', 0x0306}, {0x011F, U'g', 0x0306},
    {0x012A, U'I', 0x0304}, {0x012B, U'i', 0x0304}, {0x0130, U'I', 0x0307},
    {0x0143, U'N', 0x0301}, {0x0144, U'n', 0x0301}, {0x0147, U'N', 0x030C},
    {0x0148, U'n', 0x030C}, {0x014C, U'O', 0x0304}, {0x014D, U'o', 0x0304},
    {0x015A, U'S', 0x0301}, {0x015B, U's', 0x0301}, {0x015E, U'S', 0x0327},
    {0x015F, U's', 0x0327}, {0x0160, U'S', 0x030C}, {0x0161, U's', 0x030C},
    {0x016A, U'U', 0x0304}, {0x016B, U'u', 0x0304}, {0x016E, U'U', 0x030A},
    {0x016F, U'u', 0x030A}, {0x0178, U'Y', 0x0308}, {0x0179, U'Z', 0x0301},
    {0x017A, U'z', 0x0301}, {0x017B, U'Z', 0x0307}, {0x017C, U'z', 0x0307},
    {0x017D, U'Z', 0x030C}, {0x017E, U'z', 0x030C},
}};

bool is_combining_mark(char32_t cp) { return cp >= 0x0300 && cp <= 0x036F; }

const std::unordered_map<char32_t, Decomposition>& decompose_map() {
  static const auto* m = [] {
    auto* map = new std::unordered_map<char32_t, Decomposition>();
    for (const auto& d : kDecompositions) (*map)[d.composed] = d;
    return map;
  }();
  return *m;
}

const std::unordered_map<std::uint64_t, char32_t>& compose_map() {
  static const auto* m = [] {
    auto* map = new std::unordered_map<std::uint64_t, char32_t>();
    for (const auto& d : kDecompositions) {
      std::uint64_t key = (static_cast<std::uint64_t>(d.base) << 32) | d.mark;
      (*map)[key] = d.composed;
    }
    return map;
  }();
  return *m;
}

char32_t to_lower(char32_t cp) {
  if (cp >= U'A' && cp <= U'Z') return cp + 0x20;
  // Latin-1 uppercase block, excluding the multiplication sign.
  if (cp >= 0x00C0 && cp <= 0x00DE && cp != 0x00D7) return cp + 0x20;
  // Latin Extended-A mostly alternates upper/lower.
  if (cp >= 0x0100 && cp <= 0x0137) return (cp % 2 == 0) ? cp + 1 : cp;
  if (cp >= 0x0139 && cp <= 0x0148) return (cp % 2 == 1) ? cp + 1 : cp;
  if (cp >= 0x014A && cp <= 0x0177) return (cp % 2 == 0) ? cp + 1 : cp;
  if (cp == 0x0178) return 0x00FF;
  if (cp >= 0x0179 && cp <= 0x017E) return (cp % 2 == 1) ? cp + 1 : cp;
  return cp;
}

bool is_space_cp(char32_t cp) {
  switch (cp) {
    case U' ':
    case U'\t':
    case U'\n':
    case U'\r':
    case 0x0B:
    case 0x0C:
    case 0x00A0:
    case 0x2028:
    case 0x2029:
    case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

bool is_control_cp(char32_t cp) {
  return (cp < 0x20) || cp == 0x7F || (cp >= 0x80 && cp <= 0x9F);
}

// Composes base+mark pairs where the pair is in the table.
void compose_pass(std::vector<char32_t>& cps) {
  std::vector<char32_t> out;
  out.reserve(cps.size());
  for (char32_t cp : cps) {
    if (!out.empty() && is_combining_mark(cp)) {
      std::uint64_t key = (static_cast<std::uint64_t>(out.back()) << 32) | cp;
      auto it = compose_map().find(key);
      if (it != compose_map().end()) {
        out.back() = it->second;
        continue;
      }
    }
    out.push_back(cp);
  }
  cps = std::move(out);
}

const std::unordered_set<std::string>& abbreviation_guard() {
  static const auto* set = new std::unordered_set<std::string>{
      "dr",  "dra",  "sr",   "sra", "srta", "prof", "profa", "eng", "exmo",
      "exma", "av",  "etc",  "ex",  "p",    "pag",  "pág",   "tel", "obs",
      "cia", "ltda", "jr",   "dep", "min",  "max",  "num",   "nº",  "no.",
      "vol", "cap",  "art",  "fig", "ref",  "univ", "est",   "gen", "d",
      "sto", "sta",  "fl",   "e.g", "i.e",  "vs",   "cf"};
  return *set;
}

bool is_terminal_punct(char32_t cp) {
  return cp == U'.' || cp == U'!' || cp == U'?' || cp == 0x2026;
}

std::string codepoints_to_lower_utf8(const std::vector<char32_t>& cps,
                                     std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) utf8_append(out, to_lower(cps[i]));
  return out;
}

}  // namespace

std::string normalize(std::string_view text, const NormalizationPolicy& policy) {
  std::vector<char32_t> cps = utf8_decode(text);
  compose_pass(cps);

  std::vector<char32_t> staged;
  staged.reserve(cps.size());
  for (char32_t cp : cps) {
    if (!policy.keep_casing) cp = to_lower(cp);
    if (!policy.keep_diacritics) {
      if (is_combining_mark(cp)) continue;  // stray marks drop with diacritics
      auto it = decompose_map().find(cp);
      if (it != decompose_map().end()) cp = it->second.base;
      staged.push_back(cp);
    } else if (policy.unicode_form == UnicodeForm::kDecomposed) {
      auto it = decompose_map().find(cp);
      if (it != decompose_map().end()) {
        staged.push_back(it->second.base);
        staged.push_back(it->second.mark);
      } else {
        staged.push_back(cp);
      }
    } else {
      staged.push_back(cp);
    }
  }

  // Whitespace collapse and control removal.
  std::vector<char32_t> out;
  out.reserve(staged.size());
  bool pending_space = false;
  for (char32_t cp : staged) {
    if (is_space_cp(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (is_control_cp(cp)) continue;
    if (pending_space) {
      out.push_back(U' ');
      pending_space = false;
    }
    out.push_back(cp);
  }
  return utf8_encode(out);
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<char32_t> cps = utf8_decode(std::string(text));
  std::vector<std::string> sentences;
  const std::size_t n = cps.size();
  std::size_t start = 0;
  std::size_t i = 0;
  auto flush = [&](std::size_t end) {
    // Trim surrounding whitespace; normalized input has single spaces only.
    std::size_t a = start, b = end;
    while (a < b && is_space_cp(cps[a])) ++a;
    while (b > a && is_space_cp(cps[b - 1])) --b;
    if (b > a) {
      std::string s;
      for (std::size_t k = a; k < b; ++k) utf8_append(s, cps[k]);
      sentences.push_back(std::move(s));
    }
  };

  while (i < n) {
    if (!is_terminal_punct(cps[i])) {
      ++i;
      continue;
    }
    std::size_t run_end = i;
    while (run_end < n && is_terminal_punct(cps[run_end])) ++run_end;
    const bool followed_by_space = run_end < n && is_space_cp(cps[run_end]);
    if (!followed_by_space) {
      i = run_end;
      continue;
    }
    // Abbreviation guard applies to a single '.' only.
    bool guarded = false;
    if (run_end - i == 1 && cps[i] == U'.') {
      std::size_t w = i;
      while (w > start && !is_space_cp(cps[w - 1])) --w;
      const std::size_t word_len = i - w;
      if (word_len == 1 && !is_terminal_punct(cps[w])) {
        guarded = true;  // single-letter initial, "J. Silva"
      } else if (word_len > 1) {
        std::string word = codepoints_to_lower_utf8(cps, w, i);
        guarded = abbreviation_guard().count(word) > 0;
      }
    }
    if (guarded) {
      i = run_end;
      continue;
    }
    flush(run_end);
    start = run_end;
    i = run_end;
  }
  flush(n);
  return sentences;
}

namespace {

std::vector<std::string> split_lines(const std::string& raw) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : raw) {
    if (c == '\n') {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) {
    if (cur.back() == '\r') cur.pop_back();
    lines.push_back(cur);
  }
  return lines;
}

bool is_blank_line(const std::string& line) {
  for (char c : line) {
    if (!std::isspace(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

// Groups lines into blank-line-delimited blocks.
std::vector<std::vector<std::string>> split_blocks(
    const std::vector<std::string>& lines) {
  std::vector<std::vector<std::string>> blocks;
  std::vector<std::string> cur;
  bool in_block = false;
  for (const auto& line : lines) {
    if (is_blank_line(line)) {
      if (in_block) {
        blocks.push_back(cur);
        cur.clear();
        in_block = false;
      }
    } else {
      cur.push_back(line);
      in_block = true;
    }
  }
  if (in_block) blocks.push_back(cur);
  return blocks;
}

}  // namespace

IngestResult ingest(std::vector<std::string> paths,
                    const NormalizationPolicy& policy) {
  std::sort(paths.begin(), paths.end());
  IngestResult result;
  for (const auto& path : paths) {
    const std::string raw = read_file(path);
    const auto lines = split_lines(raw);
    // Track every blank-delimited block, including ones that clean to nothing.
    std::size_t block_index = 0;
    std::vector<std::string> cur;
    bool saw_content_line = false;
    auto finish_block = [&]() {
      if (cur.empty() && !saw_content_line) return;
      std::string joined;
      for (const auto& l : cur) {
        if (!joined.empty()) joined.push_back(' ');
        joined += l;
      }
      const std::string cleaned = normalize(joined, policy);
      std::vector<std::string> sentences = split_sentences(cleaned);
      if (sentences.empty()) {
        ++result.skipped_blocks;
      } else {
        Document doc;
        doc.id = path + "#" + std::to_string(block_index);
        doc.sentences = std::move(sentences);
        result.documents.push_back(std::move(doc));
      }
      ++block_index;
      cur.clear();
      saw_content_line = false;
    };
    bool prev_blank = true;
    bool any_content = false;
    for (const auto& line : lines) {
      if (is_blank_line(line)) {
        if (!prev_blank) finish_block();
        prev_blank = true;
      } else {
        cur.push_back(line);
        saw_content_line = true;
        any_content = true;
        prev_blank = false;
      }
    }
    if (!prev_blank || saw_content_line) finish_block();
    // A non-empty file of only blank lines is one degenerate block.
    if (!any_content && !lines.empty()) ++result.skipped_blocks;
  }
  return result;
}

std::vector<Document> read_corpus_file(const std::string& path) {
  const std::string raw = read_file(path);
  const auto lines = split_lines(raw);
  const auto blocks = split_blocks(lines);
  std::vector<Document> docs;
  docs.reserve(blocks.size());
  std::size_t idx = 0;
  for (const auto& block : blocks) {
    Document doc;
    doc.id = path + "#" + std::to_string(idx++);
    for (const auto& line : block) {
      if (!is_blank_line(line)) doc.sentences.push_back(line);
    }
    if (!doc.sentences.empty()) docs.push_back(std::move(doc));
  }
  return docs;
}

void write_corpus_file(const std::string& path,
                       const std::vector<Document>& docs) {
  std::string out;
  bool first = true;
  for (const auto& doc : docs) {
    if (!first) out.push_back('\n');
    first = false;
    for (const auto& s : doc.sentences) {
      out += s;
      out.push_back('\n');
    }
  }
  write_file(path, out);
}

}  // namespace ptlab::corpus
