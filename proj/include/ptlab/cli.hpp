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

#ifndef PTLAB_CLI_HPP_
#define PTLAB_CLI_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace ptlab::cli {

// Exit codes: 0 success, 1 data/io error, 2 configuration or usage error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitConfigError = 2;

int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

struct DemoOptions {
  std::string corpus_dir = "data/demo/corpus";
  std::string out_dir = "demo_out";
  std::uint64_t seed = 7;
  std::size_t pretrain_steps = 500;
  std::size_t vocab_size = 400;
};

// Ingest -> vocab -> pretrain-data -> pretrain -> finetune -> eval on the
// bundled toy corpus. Each stage checks its own threshold and the run fails
// naming the stage that missed it. Deterministic given the seed.
int demo_pipeline(const DemoOptions& options);

}  // namespace ptlab::cli

#endif  // PTLAB_CLI_HPP_
