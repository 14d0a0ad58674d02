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
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ptlab/common.hpp"

namespace fs = std::filesystem;
using namespace ptlab;
using corpus::NormalizationPolicy;

namespace {

fs::path make_temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("ptlab_corpus_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Independent oracle: explicit strip + lowercase maps for the characters used
// in the fixtures (kept separate from the implementation's tables).
std::string oracle_strip_lower(const std::string& utf8) {
  static const std::vector<std::pair<std::string, std::string>> map = {
      {"ê", "e"}, {"é", "e"}, {"á", "a"}, {"ã", "a"}, {"ç", "c"}, {"ô", "o"},
      {"õ", "o"}, {"í", "i"}, {"ú", "u"}, {"Ê", "e"}, {"É", "e"}, {"Á", "a"},
      {"Ã", "a"}, {"Ç", "c"}, {"B", "b"}, {"F", "f"},
  };
  std::string out;
  std::size_t i = 0;
  while (i < utf8.size()) {
    bool matched = false;
    for (const auto& [from, to] : map) {
      if (utf8.compare(i, from.size(), from) == 0) {
        out += to;
        i += from.size();
        matched = true;
        break;
      }
    }
    if (!matched) {
      char c = utf8[i];
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      out.push_back(c);
      ++i;
    }
  }
  std::string collapsed;
  for (char c : out) {
    if (c == ' ' && !collapsed.empty() && collapsed.back() == ' ') continue;
    collapsed.push_back(c);
  }
  return collapsed;
}

std::string strip_whitespace(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c != ' ') out.push_back(c);
  }
  return out;
}

}  // namespace

TEST_CASE("normalize keeps diacritics and casing by default") {
  NormalizationPolicy policy;
  CHECK(corpus::normalize("bebê", policy) == "bebê");
  CHECK(corpus::normalize("", policy) == "");
  CHECK(corpus::normalize("Bebê  Feliz", policy) == "Bebê Feliz");
}

TEST_CASE("normalize strips diacritics and casing when asked") {
  NormalizationPolicy policy;
  policy.keep_diacritics = false;
  policy.keep_casing = false;
  const std::string input = "Bebê  Feliz";
  CHECK(corpus::normalize(input, policy) == oracle_strip_lower(input));
  CHECK(corpus::normalize(input, policy) == "bebe feliz");
  CHECK(corpus::normalize("AÇÃO São Também", policy) == "acao sao tambem");
}

TEST_CASE("normalize removes control characters and collapses whitespace") {
  NormalizationPolicy policy;
  CHECK(corpus::normalize("a\tb\nc", policy) == "a b c");
  CHECK(corpus::normalize("a\x01z", policy) == "az");
  CHECK(corpus::normalize("  lead and trail  ", policy) == "lead and trail");
}

TEST_CASE("normalize composes combining sequences") {
  NormalizationPolicy policy;
  // "e" + COMBINING CIRCUMFLEX ACCENT -> precomposed ê.
  const std::string decomposed = "be\xcc\x82"
                                 "be";
  CHECK(corpus::normalize(decomposed, policy) == "bêbe");

  policy.unicode_form = corpus::UnicodeForm::kDecomposed;
  CHECK(corpus::normalize("bebê", policy) == "beb\x65\xcc\x82");
}

TEST_CASE("normalize rejects invalid UTF-8 naming the offset") {
  NormalizationPolicy policy;
  std::string bad = "ab";
  bad.push_back(static_cast<char>(0xC0));
  bad.push_back('x');
  CHECK_THROWS_WITH_AS(corpus::normalize(bad, policy),
                       doctest::Contains("offset 2"), DataError);
}

TEST_CASE("normalize is idempotent on generated unicode text") {
  Rng rng(41);
  const std::vector<char32_t> pool = {
      U'a',   U'B',   U'ç',  U'Ã',  U'é',   U'ê',   U'ü',   U' ',
      U'\t',  U'.',   U'!',  U'?',  0x2026, 0x0301, 0x0302, U'z',
      0x00A0, U'9',   U'-',  0x4E2D, 0x2581, U'Q',  0x017E};
  for (int trial = 0; trial < 200; ++trial) {
    std::string text;
    const std::size_t len = rng.next_below(40);
    for (std::size_t i = 0; i < len; ++i) {
      utf8_append(text, pool[rng.next_below(pool.size())]);
    }
    for (NormalizationPolicy policy :
         {NormalizationPolicy{},
          NormalizationPolicy{false, false, corpus::UnicodeForm::kComposed},
          NormalizationPolicy{true, true, corpus::UnicodeForm::kDecomposed}}) {
      const std::string once = corpus::normalize(text, policy);
      const std::string twice = corpus::normalize(once, policy);
      CHECK(once == twice);
    }
  }
}

TEST_CASE("split_sentences basic splits") {
  CHECK(corpus::split_sentences("Olá. Tudo bem?") ==
        std::vector<std::string>{"Olá.", "Tudo bem?"});
  CHECK(corpus::split_sentences("Sem pontuação final") ==
        std::vector<std::string>{"Sem pontuação final"});
}

TEST_CASE("split_sentences honors the abbreviation guard") {
  // Oracle: manual segmentation with "Dr." on the guard list.
  CHECK(corpus::split_sentences("Dr. Silva chegou. Saiu.") ==
        std::vector<std::string>{"Dr. Silva chegou.", "Saiu."});
  // Single-letter initials are guarded too.
  CHECK(corpus::split_sentences("J. Silva veio. Saiu.") ==
        std::vector<std::string>{"J. Silva veio.", "Saiu."});
  // Multi-mark runs split once, after the whole run.
  CHECK(corpus::split_sentences("Sim?! Claro... talvez.") ==
        std::vector<std::string>{"Sim?!", "Claro...", "talvez."});
}

TEST_CASE("split_sentences conserves non-whitespace characters") {
  Rng rng(99);
  const std::vector<std::string> words = {"olá", "dr",   "x.",  "fim!",
                                          "três", "...", "a?b", "Sim"};
  for (int trial = 0; trial < 300; ++trial) {
    std::string text;
    const std::size_t len = 1 + rng.next_below(12);
    for (std::size_t i = 0; i < len; ++i) {
      if (!text.empty()) text.push_back(' ');
      text += words[rng.next_below(words.size())];
    }
    const std::string norm = corpus::normalize(text, NormalizationPolicy{});
    const auto sentences = corpus::split_sentences(norm);
    std::string joined;
    for (const auto& s : sentences) {
      if (!joined.empty()) joined.push_back(' ');
      joined += s;
    }
    CHECK(strip_whitespace(joined) == strip_whitespace(norm));
  }
}

TEST_CASE("ingest reads blank-line-delimited blocks") {
  const fs::path dir = make_temp_dir("blocks");
  {
    std::ofstream f(dir / "a.txt");
    f << "Primeira frase. Segunda frase aqui. Terceira chegou.\n\n"
      << "Outro documento começa. Tem duas partes. E mais uma.\n";
  }
  const auto result =
      corpus::ingest({(dir / "a.txt").string()}, NormalizationPolicy{});
  REQUIRE(result.documents.size() == 2);
  CHECK(result.documents[0].sentences.size() == 3);
  CHECK(result.documents[1].sentences.size() == 3);
  CHECK(result.skipped_blocks == 0);
}

TEST_CASE("ingest counts degenerate blocks as skipped") {
  const fs::path dir = make_temp_dir("degenerate");
  {
    std::ofstream f(dir / "empty.txt");
    f << "   \n \n";
  }
  const auto result =
      corpus::ingest({(dir / "empty.txt").string()}, NormalizationPolicy{});
  CHECK(result.documents.empty());
  CHECK(result.skipped_blocks == 1);
}

TEST_CASE("ingest is deterministic and matches an independent block count") {
  const fs::path dir = make_temp_dir("many");
  std::size_t oracle_blocks = 0;  // counted while writing the fixtures
  for (int f = 0; f < 10; ++f) {
    std::ofstream out(dir / ("f" + std::to_string(f) + ".txt"));
    for (int b = 0; b < 100; ++b) {
      out << "Documento " << f << " bloco " << b
          << " primeira. Depois vem a segunda.\n\n";
      ++oracle_blocks;
    }
  }
  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(dir)) {
    paths.push_back(entry.path().string());
  }
  const auto first = corpus::ingest(paths, NormalizationPolicy{});
  CHECK(first.documents.size() == oracle_blocks);
  CHECK(first.documents.size() == 1000);

  // Stable ids and deterministic order even from shuffled path input.
  std::reverse(paths.begin(), paths.end());
  const auto second = corpus::ingest(paths, NormalizationPolicy{});
  REQUIRE(second.documents.size() == first.documents.size());
  for (std::size_t i = 0; i < first.documents.size(); ++i) {
    CHECK(first.documents[i].id == second.documents[i].id);
    CHECK(first.documents[i].sentences == second.documents[i].sentences);
  }
}

TEST_CASE("ingest reports missing files") {
  CHECK_THROWS_AS(
      corpus::ingest({"/nonexistent/nowhere.txt"}, NormalizationPolicy{}),
      IoError);
}

TEST_CASE("corpus file round-trip") {
  const fs::path dir = make_temp_dir("roundtrip");
  std::vector<corpus::Document> docs(3);
  docs[0] = {"d0", {"Uma frase.", "Outra frase."}};
  docs[1] = {"d1", {"Só uma."}};
  docs[2] = {"d2", {"Última frase.", "Com acento é útil.", "Fim."}};
  const std::string path = (dir / "corpus.txt").string();
  corpus::write_corpus_file(path, docs);
  const auto back = corpus::read_corpus_file(path);
  REQUIRE(back.size() == docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i) {
    CHECK(back[i].sentences == docs[i].sentences);
  }
}
