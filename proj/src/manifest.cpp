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

#include "ptlab/manifest.hpp"

#include <sstream>

#include "json.hpp"
#include "ptlab/common.hpp"

namespace ptlab::cfg {

KeyValues read_config_file(const std::string& path) {
  const std::string raw = read_file(path);
  KeyValues out;
  std::istringstream in(raw);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    if (line[start] == '#') continue;
    const std::size_t eq = line.find('=', start);
    if (eq == std::string::npos) {
      throw ConfigError("missing '=' at " + path + ":" +
                        std::to_string(line_no));
    }
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(start, eq - start));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("empty key at " + path + ":" + std::to_string(line_no));
    }
    out[key] = value;
  }
  return out;
}

void apply_overrides(KeyValues& config,
                     const std::vector<std::string>& overrides) {
  for (const auto& kv : overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("override must be key=value, got: " + kv);
    }
    config[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
}

std::string render_config(const KeyValues& config) {
  std::ostringstream out;
  for (const auto& [k, v] : config) out << k << '=' << v << '\n';
  return out.str();
}

std::uint64_t get_u64(const KeyValues& config, const std::string& key,
                      std::uint64_t fallback) {
  auto it = config.find(key);
  if (it == config.end()) return fallback;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an integer: " +
                      it->second);
  }
}

double get_double(const KeyValues& config, const std::string& key,
                  double fallback) {
  auto it = config.find(key);
  if (it == config.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a number: " +
                      it->second);
  }
}

std::string get_string(const KeyValues& config, const std::string& key,
                       const std::string& fallback) {
  auto it = config.find(key);
  return it == config.end() ? fallback : it->second;
}

void write_manifest(const std::string& artifact_path,
                    const std::string& command, const KeyValues& resolved,
                    const std::vector<std::string>& input_paths,
                    const std::vector<std::string>& output_paths) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = resolved;
  nlohmann::json inputs = nlohmann::json::array();
  for (const auto& p : input_paths) {
    inputs.push_back({{"path", p}, {"fnv1a64", fnv1a64_hex(read_file(p))}});
  }
  j["inputs"] = inputs;
  nlohmann::json outputs = nlohmann::json::array();
  for (const auto& p : output_paths) {
    outputs.push_back({{"path", p}, {"fnv1a64", fnv1a64_hex(read_file(p))}});
  }
  j["outputs"] = outputs;
  write_file(artifact_path + ".manifest.json", j.dump(2) + "\n");
}

}  // namespace ptlab::cfg
