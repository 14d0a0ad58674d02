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

#ifndef PTLAB_MANIFEST_HPP_
#define PTLAB_MANIFEST_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ptlab::cfg {

using KeyValues = std::map<std::string, std::string>;

// Flat key=value files; blank lines and '#' comments ignored.
KeyValues read_config_file(const std::string& path);

// Applies "key=value" override strings on top of file values.
void apply_overrides(KeyValues& config,
                     const std::vector<std::string>& overrides);

std::string render_config(const KeyValues& config);

std::uint64_t get_u64(const KeyValues& config, const std::string& key,
                      std::uint64_t fallback);
double get_double(const KeyValues& config, const std::string& key,
                  double fallback);
std::string get_string(const KeyValues& config, const std::string& key,
                       const std::string& fallback);

// Writes `<artifact>.manifest.json` next to the artifact: the command, the
// fully resolved configuration, and content hashes of inputs and outputs, so
// a run can be reproduced and its products verified.
void write_manifest(const std::string& artifact_path,
                    const std::string& command, const KeyValues& resolved,
                    const std::vector<std::string>& input_paths,
                    const std::vector<std::string>& output_paths);

}  // namespace ptlab::cfg

#endif  // PTLAB_MANIFEST_HPP_
