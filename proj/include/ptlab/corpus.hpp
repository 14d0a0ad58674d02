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

#ifndef PTLAB_CORPUS_HPP_
#define PTLAB_CORPUS_HPP_

#include <cstddef>
#include <string>
#include <vector>

namespace ptlab::corpus {

enum class UnicodeForm { kComposed, kDecomposed };

// Text cleanup policy. Diacritics and casing are kept by default; stripping
// them is available as a configuration option for ablations.
struct NormalizationPolicy {
  bool keep_diacritics = true;
  bool keep_casing = true;
  UnicodeForm unicode_form = UnicodeForm::kComposed;
};

struct Document {
  std::string id;
  std::vector<std::string> sentences;  // non-empty, source order
};

// Applies the policy: composes/decomposes accented letters in the supported
// Latin repertoire (ASCII, Latin-1 Supplement, common Latin Extended-A),
// optionally lowercases and strips diacritics, removes control characters,
// and collapses whitespace runs to single spaces. Idempotent.
//
// Throws DataError naming the byte offset on invalid UTF-8.
std::string normalize(std::string_view text, const NormalizationPolicy& policy);

// Rule-based splitter: a sentence ends at a run of terminal punctuation
// (. ! ? …) followed by whitespace, unless the preceding word is on the
// abbreviation guard list or is a single letter (initials). Text without a
// split point comes back as one sentence. Never drops or duplicates
// non-whitespace characters.
std::vector<std::string> split_sentences(std::string_view text);

struct IngestResult {
  std::vector<Document> documents;
  std::size_t skipped_blocks = 0;  // blocks that cleaned down to nothing
};

// Reads raw text files (blank-line-delimited blocks, one block per document),
// normalizes, splits into sentences. Input paths are processed in sorted
// order so the output stream is deterministic.
IngestResult ingest(std::vector<std::string> paths,
                    const NormalizationPolicy& policy);

// Corpus file format: UTF-8, one sentence per line, exactly one blank line
// between documents. Both read and written by the pipeline.
std::vector<Document> read_corpus_file(const std::string& path);
void write_corpus_file(const std::string& path,
                       const std::vector<Document>& docs);

}  // namespace ptlab::corpus

#endif  // PTLAB_CORPUS_HPP_
