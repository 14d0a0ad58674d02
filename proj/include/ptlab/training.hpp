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

#ifndef PTLAB_TRAINING_HPP_
#define PTLAB_TRAINING_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "ptlab/encoder.hpp"
#include "ptlab/pretrain_data.hpp"
#include "ptlab/tokenizer.hpp"

namespace ptlab::train {

enum class TaskKind {
  kPairClassification,
  kPairRegression,
  kSingleClassification,
};

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::kSingleClassification;
  std::size_t num_classes = 2;  // classification only
  double label_min = 1.0;       // regression score range
  double label_max = 5.0;
  std::size_t max_len = 128;    // inputs keep their first max_len tokens

  void validate() const;
};

struct TrainHyper {
  double learning_rate = 1e-3;
  std::size_t warmup_steps = 50;
  std::size_t total_steps = 500;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  double dropout = 0.1;
  bool head_only = false;  // feature extraction: update only the task head
  // Stop after this many steps while keeping the total_steps schedule
  // (0 = run to total_steps). Lets a checkpointed run be resumed exactly.
  std::size_t stop_after_step = 0;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Heads. Head tensors live in the same ParamStore as the encoder under the
// "mlm.", "pair." and "head." prefixes; count_params deliberately excludes
// them.
// ---------------------------------------------------------------------------

// MLM head: transform (hidden -> embed) + GELU + layer norm, then logits
// against the token embedding table (tied) or a separate output matrix.
template <typename T>
void add_mlm_head(nn::ParamStore<T>& store, const nn::ModelConfig& config,
                  std::uint64_t seed, bool tied);

// 2-way sentence-pair head on the pooled output (class 0 = positive).
template <typename T>
void add_pair_head(nn::ParamStore<T>& store, const nn::ModelConfig& config,
                   std::uint64_t seed);

// Task head: affine pooled -> num_classes logits (1 output for regression).
template <typename T>
void add_task_head(nn::ParamStore<T>& store, const nn::ModelConfig& config,
                   std::size_t outputs, std::uint64_t seed);

template <typename T>
struct LossOut {
  T value = T(0);
  std::size_t count = 0;  // contributing positions / rows; 0 flags "no data"
};

// Mean cross-entropy over the masked positions of a batch. When grads and
// d_sequence are given, accumulates head (and tied-embedding) gradients and
// the gradient w.r.t. the sequence states. Zero masked positions in the whole
// batch yields value 0 with count 0.
template <typename T>
LossOut<T> mlm_loss(const nn::ModelConfig& config,
                    const nn::ParamStore<T>& params, const nn::Batch& batch,
                    const std::vector<data::PretrainInstance>& instances,
                    const nn::Tensor<T>& sequence, bool tied,
                    nn::Tensor<T>* d_sequence = nullptr,
                    nn::ParamStore<T>* grads = nullptr);

// Binary cross-entropy of the 2-way softmax head on the pooled output. The
// mechanics are identical for NSP and SO; the data module fixes the label
// semantics.
template <typename T>
LossOut<T> pair_loss(const nn::ParamStore<T>& params,
                     const nn::Tensor<T>& pooled,
                     const std::vector<data::PretrainInstance>& instances,
                     nn::Tensor<T>* d_pooled = nullptr,
                     nn::ParamStore<T>* grads = nullptr);

// Stable softmax cross-entropy of one logit row; shared by heads and tests.
double softmax_cross_entropy(const std::vector<double>& logits,
                             std::size_t label);

// ---------------------------------------------------------------------------
// Optimization: decoupled-weight-decay Adam with linear warmup then linear
// decay to zero. Weight decay applies to matrices only (biases and layer-norm
// parameters are exempt).
// ---------------------------------------------------------------------------

struct AdamW {
  nn::ParamStore<float> m, v;
  std::size_t step = 0;

  explicit AdamW(const nn::ParamStore<float>& params)
      : m(params.zeros_like()), v(params.zeros_like()) {}
  AdamW() = default;

  void update(nn::ParamStore<float>& params, const nn::ParamStore<float>& grads,
              double lr, double weight_decay, bool head_only = false);
};

double lr_at_step(const TrainHyper& hyper, std::size_t step);

// Scales gradients so the global L2 norm is at most clip_norm. Returns the
// pre-clip norm.
double clip_gradients(nn::ParamStore<float>& grads, double clip_norm);

// ---------------------------------------------------------------------------
// Pre-training
// ---------------------------------------------------------------------------

struct LossTraceRow {
  std::size_t step = 0;
  double mlm = 0, pair = 0, total = 0;
};

struct TrainState {
  nn::ParamStore<float> params;  // encoder + mlm + pair heads
  nn::ParamStore<float> adam_m, adam_v;
  std::size_t step = 0;
};

struct PretrainResult {
  nn::ParamStore<float> params;
  std::vector<LossTraceRow> trace;
};

// Runs total_steps of MLM + pair-objective training over the instance list
// (batches cycle deterministically; per-step dropout streams derive from
// (seed, step), so a resumed run reproduces an unbroken one bit for bit).
// Throws NumericError naming the step if the loss goes non-finite.
PretrainResult pretrain(const nn::ModelConfig& config,
                        const std::vector<data::PretrainInstance>& instances,
                        const TrainHyper& hyper, bool tie_mlm_head = true,
                        const TrainState* resume = nullptr,
                        TrainState* final_state = nullptr);

void write_loss_trace_csv(const std::string& path,
                          const std::vector<LossTraceRow>& trace);

// Training checkpoint = model checkpoint + optimizer moments + step counter.
void save_train_state(const std::string& path, const nn::ModelConfig& config,
                      const TrainState& state);
TrainState load_train_state(const std::string& path, nn::ModelConfig* config);

// ---------------------------------------------------------------------------
// Fine-tuning and prediction
// ---------------------------------------------------------------------------

struct TaskExample {
  std::string text_a;
  std::string text_b;   // empty for single-text tasks
  double label = 0.0;   // class index or regression score
};

struct TaskModel {
  nn::ModelConfig config;
  nn::ParamStore<float> params;  // encoder + "head.*"
  TaskSpec task;
};

// Continues training of the whole pre-trained network plus a fresh affine
// head on the pooled output (cross-entropy for classification, mean squared
// error for regression). hyper.head_only switches to feature extraction.
// Throws DataError for labels outside the task's class set or score range.
TaskModel finetune(const nn::ModelConfig& config,
                   const nn::ParamStore<float>& pretrained,
                   const tok::TokenizerModel& tokenizer, const TaskSpec& task,
                   const std::vector<TaskExample>& examples,
                   const TrainHyper& hyper);

struct Prediction {
  int label = 0;               // classification argmax
  std::vector<double> probs;   // classification probability vector
  double value = 0.0;          // regression output, clamped to the range
};

// Deterministic (dropout off). Sequences longer than the task max_len keep
// their first max_len tokens.
std::vector<Prediction> predict(const TaskModel& model,
                                const tok::TokenizerModel& tokenizer,
                                const std::vector<TaskExample>& examples);

// Encodes one example per the task shape: [CLS] a [SEP] (pair: b [SEP]) with
// segment ids 0/1, truncated to the first max_len tokens.
std::pair<std::vector<int>, std::vector<int>> encode_task_example(
    const tok::TokenizerModel& tokenizer, const TaskSpec& task,
    const TaskExample& example);

}  // namespace ptlab::train

#endif  // PTLAB_TRAINING_HPP_
