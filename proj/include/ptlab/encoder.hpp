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

#ifndef PTLAB_ENCODER_HPP_
#define PTLAB_ENCODER_HPP_

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ptlab/common.hpp"
#include "ptlab/pretrain_data.hpp"
#include "ptlab/tensor.hpp"

namespace ptlab::nn {

// Architecture hyperparameters. share_layers = false is the BERT-style
// parameterization (independent layers, embed_dim == hidden); share_layers =
// true with a smaller embed_dim is the ALBERT-style one (factorized
// embeddings, one physical layer parameter set).
struct ModelConfig {
  std::size_t num_layers = 12;
  std::size_t hidden = 768;
  std::size_t heads = 12;
  std::size_t ffn_inner = 0;     // 0 -> 4 * hidden
  std::size_t vocab_size = 30000;
  std::size_t max_positions = 512;
  std::size_t embed_dim = 0;     // 0 -> hidden
  bool share_layers = false;
  std::size_t type_vocab = 2;

  std::size_t ffn() const { return ffn_inner == 0 ? 4 * hidden : ffn_inner; }
  std::size_t embed() const { return embed_dim == 0 ? hidden : embed_dim; }
  std::size_t physical_layers() const { return share_layers ? 1 : num_layers; }
  std::string layer_prefix(std::size_t layer) const {
    return share_layers ? std::string("layer_shared.")
                        : "layer_" + std::to_string(layer) + ".";
  }

  // Throws ConfigError when inconsistent (e.g. hidden % heads != 0).
  void validate() const;
};

template <typename T>
struct ParamStore {
  std::map<std::string, Tensor<T>> tensors;

  Tensor<T>& at(const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("missing tensor: " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ConfigError("missing tensor: " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return tensors.count(name) > 0; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
  }

  // Same names and shapes, all zeros. Used for gradients and optimizer state.
  ParamStore<T> zeros_like() const {
    ParamStore<T> out;
    for (const auto& [name, t] : tensors) {
      out.tensors[name].shape = t.shape;
      out.tensors[name].data.assign(t.size(), T(0));
    }
    return out;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, t] : tensors) {
      out.tensors[name].shape = t.shape;
      out.tensors[name].data.assign(t.data.begin(), t.data.end());
    }
    return out;
  }
};

// Weights from a truncated normal rescaled to std 0.02, biases zero, layer
// norm gains one. Deterministic per seed.
template <typename T>
ParamStore<T> init_params(const ModelConfig& config, std::uint64_t seed);

// Closed-form count of every encoder tensor element (embeddings, optional
// factorization projection, layer stack, pooler, layer norms). Training heads
// are counted separately by the training module.
std::uint64_t count_params(const ModelConfig& config);

// A padded batch. Rows are independent; attention_mask is 1 for real tokens.
struct Batch {
  std::size_t rows = 0;
  std::size_t seq = 0;
  std::vector<int> token_ids;
  std::vector<int> segment_ids;
  std::vector<std::uint8_t> attention_mask;
};

Batch make_batch(const std::vector<data::PretrainInstance>& instances);
Batch make_batch(const std::vector<std::vector<int>>& token_rows,
                 const std::vector<std::vector<int>>& segment_rows);

struct ForwardOptions {
  double dropout = 0.0;   // active only when rng is set
  Rng* rng = nullptr;
  bool check_finite = true;
};

template <typename T>
struct LayerCache {
  Tensor<T> input;           // rows*seq x hidden
  Tensor<T> q, k, v;         // rows*seq x hidden
  Tensor<T> attn_probs;      // rows x heads x seq x seq (post-softmax)
  Tensor<T> attn_drop_mask;  // same shape; empty when dropout off
  Tensor<T> context;         // rows*seq x hidden (heads re-concatenated)
  Tensor<T> attn_out_mask;   // rows*seq x hidden dropout mask
  Tensor<T> xhat1;           // LN1 normalized input
  std::vector<T> rstd1;      // rows*seq
  Tensor<T> mid;             // LN1 output = FFN input
  Tensor<T> ffn_pre;         // rows*seq x ffn (pre-GELU)
  Tensor<T> ffn_act;         // rows*seq x ffn
  Tensor<T> ffn_out_mask;    // rows*seq x hidden dropout mask
  Tensor<T> xhat2;
  std::vector<T> rstd2;
};

template <typename T>
struct EncoderActivations {
  Tensor<T> token_raw;      // rows*seq x embed (pre-projection lookup)
  Tensor<T> emb_xhat;       // embedding LN normalized input
  std::vector<T> emb_rstd;  // rows*seq
  Tensor<T> emb_drop_mask;  // rows*seq x hidden
  std::vector<LayerCache<T>> layers;
  Tensor<T> final_states;   // rows*seq x hidden
  Tensor<T> pooled;         // rows x hidden (post-tanh)
};

template <typename T>
struct ForwardResult {
  Tensor<T> sequence;  // rows x seq x hidden
  Tensor<T> pooled;    // rows x hidden
};

// Token/position/segment embeddings (token optionally projected embed ->
// hidden), layer norm, then num_layers post-LN transformer layers with
// multi-head scaled-dot-product attention and a GELU feed-forward. Pooled
// output is tanh(W * cls + b) on the final layer's first position.
//
// Throws DataError for out-of-range token ids and NumericError (naming the
// layer) if an activation goes non-finite.
template <typename T>
ForwardResult<T> encoder_forward(const ModelConfig& config,
                                 const ParamStore<T>& params,
                                 const Batch& batch,
                                 const ForwardOptions& options = {},
                                 EncoderActivations<T>* cache = nullptr);

// Accumulates parameter gradients into `grads` given upstream gradients for
// the sequence states and the pooled output (either may be empty).
template <typename T>
void encoder_backward(const ModelConfig& config, const ParamStore<T>& params,
                      const Batch& batch, const EncoderActivations<T>& cache,
                      const Tensor<T>& d_sequence, const Tensor<T>& d_pooled,
                      ParamStore<T>& grads);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

// Compares analytic gradients against central finite differences on a random
// subset of at least `samples` parameters. `loss_and_grads` runs the analytic
// path once; `loss_value` re-evaluates the loss under perturbed parameters.
// Run this on the double instantiation: float round-off swamps an epsilon of
// 1e-4.
GradCheckResult gradient_check(
    ParamStore<double>& params,
    const std::function<std::pair<double, ParamStore<double>>()>&
        loss_and_grads,
    const std::function<double()>& loss_value, double epsilon = 1e-4,
    std::size_t samples = 200, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Checkpoints: versioned magic, config as key-value text, then named tensors
// with shapes and little-endian 32-bit float payloads.
// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ParamStore<float>& params,
                     const std::map<std::string, std::string>& extra = {});

struct Checkpoint {
  ModelConfig config;
  ParamStore<float> params;
  std::map<std::string, std::string> extra;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace ptlab::nn

#endif  // PTLAB_ENCODER_HPP_
