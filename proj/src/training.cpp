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

#include "ptlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace ptlab::train {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865476)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.7071067811865476)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
  return cdf + x * pdf;
}

// Weight decay applies to matrices; vectors (biases, layer-norm gains) are
// exempt.
bool decayed(const std::string& name, const nn::Tensor<float>& t) {
  (void)name;
  return t.shape.size() >= 2;
}

template <typename T>
void init_weight_tensor(nn::Tensor<T>& t, Rng& rng) {
  for (auto& v : t.data) v = static_cast<T>(rng.next_truncated_normal(0.02));
}

}  // namespace

void TaskSpec::validate() const {
  if (max_len < 4) throw ConfigError("task max_len too small");
  if (kind == TaskKind::kPairRegression) {
    if (label_min != 1.0 || label_max != 5.0) {
      throw ConfigError("pair regression uses the [1, 5] score range");
    }
  } else if (num_classes < 2) {
    throw ConfigError("classification needs at least 2 classes");
  }
}

void TrainHyper::validate() const {
  // learning_rate 0 is allowed: it disables updates (useful as a control).
  if (learning_rate < 0 || total_steps == 0 || batch_size == 0 ||
      clip_norm <= 0) {
    throw ConfigError("training hyperparameters must be positive");
  }
  if (warmup_steps > total_steps) {
    throw ConfigError("warmup_steps must not exceed total_steps");
  }
  if (dropout < 0 || dropout >= 1) {
    throw ConfigError("dropout must lie in [0, 1)");
  }
}

template <typename T>
void add_mlm_head(nn::ParamStore<T>& store, const nn::ModelConfig& config,
                  std::uint64_t seed, bool tied) {
  const std::size_t h = config.hidden;
  const std::size_t e = config.embed();
  Rng rng(seed ^ 0x6d6c6dULL);
  store.tensors["mlm.transform.weight"].reshape({e, h});
  init_weight_tensor(store.tensors["mlm.transform.weight"], rng);
  store.tensors["mlm.transform.bias"].reshape({e});
  store.tensors["mlm.norm.gain"].reshape({e});
  for (auto& v : store.tensors["mlm.norm.gain"].data) v = T(1);
  store.tensors["mlm.norm.bias"].reshape({e});
  store.tensors["mlm.output.bias"].reshape({config.vocab_size});
  if (!tied) {
    store.tensors["mlm.output.weight"].reshape({config.vocab_size, e});
    init_weight_tensor(store.tensors["mlm.output.weight"], rng);
  }
}

template <typename T>
void add_pair_head(nn::ParamStore<T>& store, const nn::ModelConfig& config,
                   std::uint64_t seed) {
  Rng rng(seed ^ 0x706169ULL);
  store.tensors["pair.weight"].reshape({2, config.hidden});
  init_weight_tensor(store.tensors["pair.weight"], rng);
  store.tensors["pair.bias"].reshape({2});
}

template <typename T>
void add_task_head(nn::ParamStore<T>& store, const nn::ModelConfig& config,
                   std::size_t outputs, std::uint64_t seed) {
  Rng rng(seed ^ 0x686561ULL);
  store.tensors["head.weight"].reshape({outputs, config.hidden});
  init_weight_tensor(store.tensors["head.weight"], rng);
  store.tensors["head.bias"].reshape({outputs});
}

double softmax_cross_entropy(const std::vector<double>& logits,
                             std::size_t label) {
  double mx = logits[0];
  for (double z : logits) mx = std::max(mx, z);
  double denom = 0;
  for (double z : logits) denom += std::exp(z - mx);
  return std::log(denom) - (logits[label] - mx);
}

template <typename T>
LossOut<T> mlm_loss(const nn::ModelConfig& config,
                    const nn::ParamStore<T>& params, const nn::Batch& batch,
                    const std::vector<data::PretrainInstance>& instances,
                    const nn::Tensor<T>& sequence, bool tied,
                    nn::Tensor<T>* d_sequence, nn::ParamStore<T>* grads) {
  const std::size_t H = config.hidden;
  const std::size_t E = config.embed();
  const std::size_t V = config.vocab_size;
  const std::size_t S = batch.seq;

  // Gather masked positions.
  std::vector<std::size_t> flat_pos;
  std::vector<int> labels;
  for (std::size_t r = 0; r < instances.size(); ++r) {
    for (std::size_t k = 0; k < instances[r].masked_positions.size(); ++k) {
      const std::size_t p = instances[r].masked_positions[k];
      if (p >= S) throw DataError("masked position beyond sequence length");
      const int label = instances[r].masked_labels[k];
      if (label < 0 || static_cast<std::size_t>(label) >= V) {
        throw DataError("masked label outside vocabulary: " +
                        std::to_string(label));
      }
      flat_pos.push_back(r * S + p);
      labels.push_back(label);
    }
  }
  LossOut<T> out;
  out.count = flat_pos.size();
  if (flat_pos.empty()) return out;  // defined as 0, flagged by count == 0
  const std::size_t n = flat_pos.size();

  nn::Tensor<T> states({n, H});
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(states.ptr() + i * H, sequence.ptr() + flat_pos[i] * H,
                H * sizeof(T));
  }

  const nn::Tensor<T>& wt = params.at("mlm.transform.weight");
  const nn::Tensor<T>& bt = params.at("mlm.transform.bias");
  nn::Tensor<T> pre({n, E});
  nn::matmul_nt(states.ptr(), wt.ptr(), pre.ptr(), n, H, E);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < E; ++j) pre[i * E + j] += bt[j];
  }
  nn::Tensor<T> act({n, E});
  for (std::size_t i = 0; i < n * E; ++i) act[i] = gelu(pre[i]);

  // Layer norm over E.
  const nn::Tensor<T>& gain = params.at("mlm.norm.gain");
  const nn::Tensor<T>& bias = params.at("mlm.norm.bias");
  nn::Tensor<T> xhat({n, E}), normed({n, E});
  std::vector<T> rstd(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = act.ptr() + i * E;
    T mean = 0;
    for (std::size_t j = 0; j < E; ++j) mean += xi[j];
    mean /= static_cast<T>(E);
    T var = 0;
    for (std::size_t j = 0; j < E; ++j) {
      const T d = xi[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(E);
    rstd[i] = T(1) / std::sqrt(var + T(1e-12));
    for (std::size_t j = 0; j < E; ++j) {
      xhat[i * E + j] = (xi[j] - mean) * rstd[i];
      normed[i * E + j] = gain[j] * xhat[i * E + j] + bias[j];
    }
  }

  const nn::Tensor<T>& output_table =
      tied ? params.at("embeddings.token") : params.at("mlm.output.weight");
  const nn::Tensor<T>& b_out = params.at("mlm.output.bias");
  nn::Tensor<T> logits({n, V});
  nn::matmul_nt(normed.ptr(), output_table.ptr(), logits.ptr(), n, E, V);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < V; ++j) logits[i * V + j] += b_out[j];
  }

  // Mean cross-entropy; dlogits = (softmax - onehot) / n when grads wanted.
  nn::Tensor<T> dlogits;
  const bool want_grads = d_sequence != nullptr && grads != nullptr;
  if (want_grads) dlogits.reshape({n, V});
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    T* zi = logits.ptr() + i * V;
    T mx = zi[0];
    for (std::size_t j = 1; j < V; ++j) mx = std::max(mx, zi[j]);
    T denom = 0;
    for (std::size_t j = 0; j < V; ++j) denom += std::exp(zi[j] - mx);
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    total += std::log(denom) - (zi[y] - mx);
    if (want_grads) {
      T* di = dlogits.ptr() + i * V;
      for (std::size_t j = 0; j < V; ++j) {
        di[j] = std::exp(zi[j] - mx) / denom / static_cast<T>(n);
      }
      di[y] -= T(1) / static_cast<T>(n);
    }
  }
  out.value = total / static_cast<T>(n);
  if (!want_grads) return out;

  // Backward.
  nn::Tensor<T> dnormed({n, E});
  nn::matmul_nn(dlogits.ptr(), output_table.ptr(), dnormed.ptr(), n, V, E);
  {
    nn::Tensor<T>& d_table = tied ? grads->at("embeddings.token")
                                  : grads->at("mlm.output.weight");
    nn::matmul_tn(dlogits.ptr(), normed.ptr(), d_table.ptr(), n, V, E, true);
    nn::Tensor<T>& db = grads->at("mlm.output.bias");
    for (std::size_t i = 0; i < n; ++i) {
      const T* di = dlogits.ptr() + i * V;
      for (std::size_t j = 0; j < V; ++j) db[j] += di[j];
    }
  }

  nn::Tensor<T> dact({n, E});
  {
    nn::Tensor<T>& dgain = grads->at("mlm.norm.gain");
    nn::Tensor<T>& dbias = grads->at("mlm.norm.bias");
    for (std::size_t i = 0; i < n; ++i) {
      const T* dyi = dnormed.ptr() + i * E;
      const T* hi = xhat.ptr() + i * E;
      T m1 = 0, m2 = 0;
      for (std::size_t j = 0; j < E; ++j) {
        const T t = dyi[j] * gain[j];
        m1 += t;
        m2 += t * hi[j];
        dgain[j] += dyi[j] * hi[j];
        dbias[j] += dyi[j];
      }
      m1 /= static_cast<T>(E);
      m2 /= static_cast<T>(E);
      T* dai = dact.ptr() + i * E;
      for (std::size_t j = 0; j < E; ++j) {
        const T t = dyi[j] * gain[j];
        dai[j] = (t - m1 - hi[j] * m2) * rstd[i];
      }
    }
  }

  nn::Tensor<T> dpre({n, E});
  for (std::size_t i = 0; i < n * E; ++i) {
    dpre[i] = dact[i] * gelu_grad(pre[i]);
  }
  nn::matmul_tn(dpre.ptr(), states.ptr(), grads->at("mlm.transform.weight").ptr(),
                n, E, H, true);
  {
    nn::Tensor<T>& db = grads->at("mlm.transform.bias");
    for (std::size_t i = 0; i < n; ++i) {
      const T* di = dpre.ptr() + i * E;
      for (std::size_t j = 0; j < E; ++j) db[j] += di[j];
    }
  }
  nn::Tensor<T> dstates({n, H});
  nn::matmul_nn(dpre.ptr(), wt.ptr(), dstates.ptr(), n, E, H);
  for (std::size_t i = 0; i < n; ++i) {
    T* row = d_sequence->ptr() + flat_pos[i] * H;
    const T* di = dstates.ptr() + i * H;
    for (std::size_t j = 0; j < H; ++j) row[j] += di[j];
  }
  return out;
}

template <typename T>
LossOut<T> pair_loss(const nn::ParamStore<T>& params,
                     const nn::Tensor<T>& pooled,
                     const std::vector<data::PretrainInstance>& instances,
                     nn::Tensor<T>* d_pooled, nn::ParamStore<T>* grads) {
  const std::size_t R = instances.size();
  const std::size_t H = pooled.shape.back();
  const nn::Tensor<T>& w = params.at("pair.weight");
  const nn::Tensor<T>& b = params.at("pair.bias");

  LossOut<T> out;
  out.count = R;
  if (R == 0) return out;

  nn::Tensor<T> logits({R, 2});
  nn::matmul_nt(pooled.ptr(), w.ptr(), logits.ptr(), R, H, 2);
  const bool want_grads = d_pooled != nullptr && grads != nullptr;
  nn::Tensor<T> dlogits;
  if (want_grads) dlogits.reshape({R, 2});
  T total = 0;
  for (std::size_t r = 0; r < R; ++r) {
    T z0 = logits[r * 2] + b[0];
    T z1 = logits[r * 2 + 1] + b[1];
    const std::size_t y =
        instances[r].pair_label == data::PairLabel::kPositive ? 0 : 1;
    const T mx = std::max(z0, z1);
    const T denom = std::exp(z0 - mx) + std::exp(z1 - mx);
    const T zy = y == 0 ? z0 : z1;
    total += std::log(denom) - (zy - mx);
    if (want_grads) {
      dlogits[r * 2] = std::exp(z0 - mx) / denom / static_cast<T>(R);
      dlogits[r * 2 + 1] = std::exp(z1 - mx) / denom / static_cast<T>(R);
      dlogits[r * 2 + y] -= T(1) / static_cast<T>(R);
    }
  }
  out.value = total / static_cast<T>(R);
  if (!want_grads) return out;

  nn::matmul_tn(dlogits.ptr(), pooled.ptr(), grads->at("pair.weight").ptr(), R,
                2, H, true);
  nn::Tensor<T>& db = grads->at("pair.bias");
  for (std::size_t r = 0; r < R; ++r) {
    db[0] += dlogits[r * 2];
    db[1] += dlogits[r * 2 + 1];
  }
  nn::matmul_nn(dlogits.ptr(), w.ptr(), d_pooled->ptr(), R, 2, H, true);
  return out;
}

double lr_at_step(const TrainHyper& hyper, std::size_t step) {
  const double lr = hyper.learning_rate;
  if (step < hyper.warmup_steps) {
    return lr * static_cast<double>(step + 1) /
           static_cast<double>(hyper.warmup_steps);
  }
  const double remaining = static_cast<double>(hyper.total_steps - step);
  const double span =
      static_cast<double>(hyper.total_steps - hyper.warmup_steps);
  return span > 0 ? lr * remaining / span : lr;
}

double clip_gradients(nn::ParamStore<float>& grads, double clip_norm) {
  double sq = 0;
  for (const auto& [name, t] : grads.tensors) {
    for (float v : t.data) sq += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > clip_norm && norm > 0) {
    const float scale = static_cast<float>(clip_norm / norm);
    for (auto& [name, t] : grads.tensors) {
      for (float& v : t.data) v *= scale;
    }
  }
  return norm;
}

void AdamW::update(nn::ParamStore<float>& params,
                   const nn::ParamStore<float>& grads, double lr,
                   double weight_decay, bool head_only) {
  ++step;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
  for (auto& [name, p] : params.tensors) {
    if (head_only && name.rfind("head.", 0) != 0) continue;
    const nn::Tensor<float>& g = grads.at(name);
    nn::Tensor<float>& mm = m.at(name);
    nn::Tensor<float>& vv = v.at(name);
    const bool decay = decayed(name, p);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      mm[i] = static_cast<float>(kAdamBeta1 * mm[i] + (1 - kAdamBeta1) * gi);
      vv[i] = static_cast<float>(kAdamBeta2 * vv[i] + (1 - kAdamBeta2) * gi * gi);
      const double mhat = mm[i] / bc1;
      const double vhat = vv[i] / bc2;
      double delta = lr * mhat / (std::sqrt(vhat) + kAdamEps);
      if (decay) delta += lr * weight_decay * p[i];
      p[i] = static_cast<float>(p[i] - delta);
    }
  }
}

PretrainResult pretrain(const nn::ModelConfig& config,
                        const std::vector<data::PretrainInstance>& instances,
                        const TrainHyper& hyper, bool tie_mlm_head,
                        const TrainState* resume, TrainState* final_state) {
  config.validate();
  hyper.validate();
  if (instances.empty()) throw DataError("no pre-training instances");

  nn::ParamStore<float> params;
  AdamW opt;
  std::size_t start_step = 0;
  if (resume != nullptr) {
    params = resume->params;
    opt.m = resume->adam_m;
    opt.v = resume->adam_v;
    opt.step = resume->step;
    start_step = resume->step;
  } else {
    params = nn::init_params<float>(config, hyper.seed);
    add_mlm_head(params, config, hyper.seed, tie_mlm_head);
    add_pair_head(params, config, hyper.seed);
    opt = AdamW(params);
  }

  PretrainResult result;
  const std::size_t n = instances.size();
  const std::size_t end_step =
      hyper.stop_after_step > 0
          ? std::min(hyper.stop_after_step, hyper.total_steps)
          : hyper.total_steps;
  for (std::size_t step = start_step; step < end_step; ++step) {
    std::vector<data::PretrainInstance> batch_insts;
    batch_insts.reserve(hyper.batch_size);
    for (std::size_t i = 0; i < hyper.batch_size; ++i) {
      batch_insts.push_back(instances[(step * hyper.batch_size + i) % n]);
    }
    nn::Batch batch = nn::make_batch(batch_insts);

    Rng step_rng = Rng::derive(hyper.seed, 0xDD0B, step);
    nn::ForwardOptions fwd;
    fwd.dropout = hyper.dropout;
    fwd.rng = hyper.dropout > 0 ? &step_rng : nullptr;
    nn::EncoderActivations<float> cache;
    nn::ForwardResult<float> fstates =
        nn::encoder_forward<float>(config, params, batch, fwd, &cache);

    nn::ParamStore<float> grads = params.zeros_like();
    nn::Tensor<float> d_sequence({batch.rows * batch.seq, config.hidden});
    nn::Tensor<float> d_pooled({batch.rows, config.hidden});
    const LossOut<float> mlm =
        mlm_loss<float>(config, params, batch, batch_insts, fstates.sequence,
                        tie_mlm_head, &d_sequence, &grads);
    const LossOut<float> pair = pair_loss<float>(
        params, fstates.pooled, batch_insts, &d_pooled, &grads);
    const double total =
        static_cast<double>(mlm.value) + static_cast<double>(pair.value);
    if (!std::isfinite(total)) {
      throw NumericError("loss diverged at step " + std::to_string(step));
    }
    nn::encoder_backward<float>(config, params, batch, cache, d_sequence,
                                d_pooled, grads);
    clip_gradients(grads, hyper.clip_norm);
    opt.update(params, grads, lr_at_step(hyper, step), hyper.weight_decay);

    result.trace.push_back({step, static_cast<double>(mlm.value),
                            static_cast<double>(pair.value), total});
  }

  if (final_state != nullptr) {
    final_state->params = params;
    final_state->adam_m = opt.m;
    final_state->adam_v = opt.v;
    final_state->step = end_step;
  }
  result.params = std::move(params);
  return result;
}

void write_loss_trace_csv(const std::string& path,
                          const std::vector<LossTraceRow>& trace) {
  std::ostringstream out;
  out << "step,mlm_loss,pair_loss,total\n";
  for (const auto& row : trace) {
    out << row.step << ',' << row.mlm << ',' << row.pair << ',' << row.total
        << '\n';
  }
  write_file(path, out.str());
}

void save_train_state(const std::string& path, const nn::ModelConfig& config,
                      const TrainState& state) {
  nn::ParamStore<float> combined = state.params;
  for (const auto& [name, t] : state.adam_m.tensors) {
    combined.tensors["adam.m." + name] = t;
  }
  for (const auto& [name, t] : state.adam_v.tensors) {
    combined.tensors["adam.v." + name] = t;
  }
  nn::save_checkpoint(path, config, combined,
                      {{"train_step", std::to_string(state.step)}});
}

TrainState load_train_state(const std::string& path, nn::ModelConfig* config) {
  nn::Checkpoint ckpt = nn::load_checkpoint(path);
  TrainState state;
  for (const auto& [name, t] : ckpt.params.tensors) {
    if (name.rfind("adam.m.", 0) == 0) {
      state.adam_m.tensors[name.substr(7)] = t;
    } else if (name.rfind("adam.v.", 0) == 0) {
      state.adam_v.tensors[name.substr(7)] = t;
    } else {
      state.params.tensors[name] = t;
    }
  }
  auto it = ckpt.extra.find("train_step");
  state.step = it == ckpt.extra.end() ? 0 : std::stoull(it->second);
  if (config != nullptr) *config = ckpt.config;
  return state;
}

// ---------------------------------------------------------------------------
// Fine-tuning
// ---------------------------------------------------------------------------

std::pair<std::vector<int>, std::vector<int>> encode_task_example(
    const tok::TokenizerModel& tokenizer, const TaskSpec& task,
    const TaskExample& example) {
  std::vector<int> ids{tok::kClsId};
  std::vector<int> segs{0};
  const std::vector<int> a = tok::encode(tokenizer, example.text_a);
  ids.insert(ids.end(), a.begin(), a.end());
  ids.push_back(tok::kSepId);
  segs.insert(segs.end(), a.size() + 1, 0);
  if (task.kind != TaskKind::kSingleClassification) {
    const std::vector<int> b = tok::encode(tokenizer, example.text_b);
    ids.insert(ids.end(), b.begin(), b.end());
    ids.push_back(tok::kSepId);
    segs.insert(segs.end(), b.size() + 1, 1);
  }
  if (ids.size() > task.max_len) {  // keep the earliest tokens
    ids.resize(task.max_len);
    segs.resize(task.max_len);
  }
  return {std::move(ids), std::move(segs)};
}

namespace {

void validate_labels(const TaskSpec& task,
                     const std::vector<TaskExample>& examples) {
  for (const auto& ex : examples) {
    if (task.kind == TaskKind::kPairRegression) {
      if (ex.label < task.label_min || ex.label > task.label_max) {
        throw DataError("regression label " + std::to_string(ex.label) +
                        " outside [" + std::to_string(task.label_min) + ", " +
                        std::to_string(task.label_max) + "]");
      }
    } else {
      const double r = std::round(ex.label);
      if (r != ex.label || r < 0 ||
          r >= static_cast<double>(task.num_classes)) {
        throw DataError("class label " + std::to_string(ex.label) +
                        " outside 0.." + std::to_string(task.num_classes - 1));
      }
    }
  }
}

}  // namespace

TaskModel finetune(const nn::ModelConfig& config,
                   const nn::ParamStore<float>& pretrained,
                   const tok::TokenizerModel& tokenizer, const TaskSpec& task,
                   const std::vector<TaskExample>& examples,
                   const TrainHyper& hyper) {
  config.validate();
  task.validate();
  hyper.validate();
  if (examples.empty()) throw DataError("no fine-tuning examples");
  validate_labels(task, examples);

  TaskModel model;
  model.config = config;
  model.task = task;
  // Keep only encoder tensors from the pre-trained store; heads are fresh.
  for (const auto& [name, t] : pretrained.tensors) {
    if (name.rfind("mlm.", 0) == 0 || name.rfind("pair.", 0) == 0 ||
        name.rfind("head.", 0) == 0) {
      continue;
    }
    model.params.tensors[name] = t;
  }
  const std::size_t outputs =
      task.kind == TaskKind::kPairRegression ? 1 : task.num_classes;
  add_task_head(model.params, config, outputs, hyper.seed);

  std::vector<std::vector<int>> ids(examples.size()), segs(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    auto [t, s] = encode_task_example(tokenizer, task, examples[i]);
    ids[i] = std::move(t);
    segs[i] = std::move(s);
  }

  AdamW opt(model.params);
  const std::size_t H = config.hidden;
  const std::size_t n = examples.size();
  for (std::size_t step = 0; step < hyper.total_steps; ++step) {
    std::vector<std::vector<int>> bt, bs;
    std::vector<double> by;
    for (std::size_t i = 0; i < hyper.batch_size; ++i) {
      const std::size_t idx = (step * hyper.batch_size + i) % n;
      bt.push_back(ids[idx]);
      bs.push_back(segs[idx]);
      by.push_back(examples[idx].label);
    }
    nn::Batch batch = nn::make_batch(bt, bs);
    const std::size_t R = batch.rows;

    Rng step_rng = Rng::derive(hyper.seed, 0xF17E, step);
    nn::ForwardOptions fwd;
    fwd.dropout = hyper.dropout;
    fwd.rng = hyper.dropout > 0 ? &step_rng : nullptr;
    nn::EncoderActivations<float> cache;
    nn::ForwardResult<float> fstates =
        nn::encoder_forward<float>(config, model.params, batch, fwd, &cache);

    const nn::Tensor<float>& w = model.params.at("head.weight");
    const nn::Tensor<float>& b = model.params.at("head.bias");
    nn::Tensor<float> logits({R, outputs});
    nn::matmul_nt(fstates.pooled.ptr(), w.ptr(), logits.ptr(), R, H, outputs);
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t j = 0; j < outputs; ++j) logits[r * outputs + j] += b[j];
    }

    nn::ParamStore<float> grads = model.params.zeros_like();
    nn::Tensor<float> dlogits({R, outputs});
    double loss = 0;
    if (task.kind == TaskKind::kPairRegression) {
      for (std::size_t r = 0; r < R; ++r) {
        const double diff = logits[r] - by[r];
        loss += diff * diff;
        dlogits[r] = static_cast<float>(2.0 * diff / static_cast<double>(R));
      }
      loss /= static_cast<double>(R);
    } else {
      for (std::size_t r = 0; r < R; ++r) {
        float* z = logits.ptr() + r * outputs;
        float mx = z[0];
        for (std::size_t j = 1; j < outputs; ++j) mx = std::max(mx, z[j]);
        double denom = 0;
        for (std::size_t j = 0; j < outputs; ++j) denom += std::exp(z[j] - mx);
        const std::size_t y = static_cast<std::size_t>(by[r]);
        loss += std::log(denom) - (z[y] - mx);
        for (std::size_t j = 0; j < outputs; ++j) {
          dlogits[r * outputs + j] = static_cast<float>(
              std::exp(z[j] - mx) / denom / static_cast<double>(R));
        }
        dlogits[r * outputs + y] -= 1.0f / static_cast<float>(R);
      }
      loss /= static_cast<double>(R);
    }
    if (!std::isfinite(loss)) {
      throw NumericError("fine-tuning loss diverged at step " +
                         std::to_string(step));
    }

    nn::matmul_tn(dlogits.ptr(), fstates.pooled.ptr(),
                  grads.at("head.weight").ptr(), R, outputs, H, true);
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t j = 0; j < outputs; ++j) {
        grads.at("head.bias")[j] += dlogits[r * outputs + j];
      }
    }
    nn::Tensor<float> d_pooled({R, H});
    nn::matmul_nn(dlogits.ptr(), w.ptr(), d_pooled.ptr(), R, outputs, H);
    nn::Tensor<float> d_sequence;
    if (!hyper.head_only) {
      nn::encoder_backward<float>(config, model.params, batch, cache,
                                  d_sequence, d_pooled, grads);
    }
    clip_gradients(grads, hyper.clip_norm);
    opt.update(model.params, grads, lr_at_step(hyper, step),
               hyper.weight_decay, hyper.head_only);
  }
  return model;
}

std::vector<Prediction> predict(const TaskModel& model,
                                const tok::TokenizerModel& tokenizer,
                                const std::vector<TaskExample>& examples) {
  std::vector<Prediction> out;
  const std::size_t H = model.config.hidden;
  const std::size_t outputs = model.params.at("head.weight").shape[0];
  constexpr std::size_t kChunk = 16;
  for (std::size_t begin = 0; begin < examples.size(); begin += kChunk) {
    const std::size_t end = std::min(begin + kChunk, examples.size());
    std::vector<std::vector<int>> bt, bs;
    for (std::size_t i = begin; i < end; ++i) {
      auto [t, s] = encode_task_example(tokenizer, model.task, examples[i]);
      bt.push_back(std::move(t));
      bs.push_back(std::move(s));
    }
    nn::Batch batch = nn::make_batch(bt, bs);
    nn::ForwardResult<float> fstates =
        nn::encoder_forward<float>(model.config, model.params, batch);
    const nn::Tensor<float>& w = model.params.at("head.weight");
    const nn::Tensor<float>& b = model.params.at("head.bias");
    for (std::size_t r = 0; r < batch.rows; ++r) {
      std::vector<double> logits(outputs);
      for (std::size_t j = 0; j < outputs; ++j) {
        double acc = b[j];
        const float* wj = w.ptr() + j * H;
        const float* pr = fstates.pooled.ptr() + r * H;
        for (std::size_t d = 0; d < H; ++d) {
          acc += static_cast<double>(wj[d]) * pr[d];
        }
        logits[j] = acc;
      }
      Prediction pred;
      if (model.task.kind == TaskKind::kPairRegression) {
        pred.value = std::clamp(logits[0], model.task.label_min,
                                model.task.label_max);
      } else {
        double mx = logits[0];
        for (double z : logits) mx = std::max(mx, z);
        double denom = 0;
        for (double z : logits) denom += std::exp(z - mx);
        pred.probs.resize(outputs);
        int best = 0;
        for (std::size_t j = 0; j < outputs; ++j) {
          pred.probs[j] = std::exp(logits[j] - mx) / denom;
          if (logits[j] > logits[static_cast<std::size_t>(best)]) {
            best = static_cast<int>(j);
          }
        }
        pred.label = best;
      }
      out.push_back(std::move(pred));
    }
  }
  return out;
}

// Explicit instantiations (double is used by the gradient checker).
template void add_mlm_head<float>(nn::ParamStore<float>&,
                                  const nn::ModelConfig&, std::uint64_t, bool);
template void add_mlm_head<double>(nn::ParamStore<double>&,
                                   const nn::ModelConfig&, std::uint64_t,
                                   bool);
template void add_pair_head<float>(nn::ParamStore<float>&,
                                   const nn::ModelConfig&, std::uint64_t);
template void add_pair_head<double>(nn::ParamStore<double>&,
                                    const nn::ModelConfig&, std::uint64_t);
template void add_task_head<float>(nn::ParamStore<float>&,
                                   const nn::ModelConfig&, std::size_t,
                                   std::uint64_t);
template void add_task_head<double>(nn::ParamStore<double>&,
                                    const nn::ModelConfig&, std::size_t,
                                    std::uint64_t);
template LossOut<float> mlm_loss<float>(
    const nn::ModelConfig&, const nn::ParamStore<float>&, const nn::Batch&,
    const std::vector<data::PretrainInstance>&, const nn::Tensor<float>&, bool,
    nn::Tensor<float>*, nn::ParamStore<float>*);
template LossOut<double> mlm_loss<double>(
    const nn::ModelConfig&, const nn::ParamStore<double>&, const nn::Batch&,
    const std::vector<data::PretrainInstance>&, const nn::Tensor<double>&,
    bool, nn::Tensor<double>*, nn::ParamStore<double>*);
template LossOut<float> pair_loss<float>(
    const nn::ParamStore<float>&, const nn::Tensor<float>&,
    const std::vector<data::PretrainInstance>&, nn::Tensor<float>*,
    nn::ParamStore<float>*);
template LossOut<double> pair_loss<double>(
    const nn::ParamStore<double>&, const nn::Tensor<double>&,
    const std::vector<data::PretrainInstance>&, nn::Tensor<double>*,
    nn::ParamStore<double>*);

}  // namespace ptlab::train
