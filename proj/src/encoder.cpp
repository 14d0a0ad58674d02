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

#include "ptlab/encoder.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ptlab::nn {

namespace {

constexpr double kLayerNormEps = 1e-12;

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

// y = g * (x - mean) / sqrt(var + eps) + b over the last dimension; caches
// the normalized values and reciprocal stddev for the backward pass.
template <typename T>
void layer_norm_forward(const T* x, const T* gain, const T* bias,
                        std::size_t rows, std::size_t width, T* y, T* xhat,
                        T* rstd) {
  for (std::size_t m = 0; m < rows; ++m) {
    const T* xm = x + m * width;
    T mean = 0;
    for (std::size_t j = 0; j < width; ++j) mean += xm[j];
    mean /= static_cast<T>(width);
    T var = 0;
    for (std::size_t j = 0; j < width; ++j) {
      const T d = xm[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(width);
    const T r = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    rstd[m] = r;
    T* ym = y + m * width;
    T* hm = xhat + m * width;
    for (std::size_t j = 0; j < width; ++j) {
      hm[j] = (xm[j] - mean) * r;
      ym[j] = gain[j] * hm[j] + bias[j];
    }
  }
}

template <typename T>
void layer_norm_backward(const T* dy, const T* xhat, const T* rstd,
                         const T* gain, std::size_t rows, std::size_t width,
                         T* dx, T* dgain, T* dbias) {
  for (std::size_t m = 0; m < rows; ++m) {
    const T* dym = dy + m * width;
    const T* hm = xhat + m * width;
    T* dxm = dx + m * width;
    T m1 = 0, m2 = 0;
    for (std::size_t j = 0; j < width; ++j) {
      const T t = dym[j] * gain[j];
      m1 += t;
      m2 += t * hm[j];
      dgain[j] += dym[j] * hm[j];
      dbias[j] += dym[j];
    }
    m1 /= static_cast<T>(width);
    m2 /= static_cast<T>(width);
    for (std::size_t j = 0; j < width; ++j) {
      const T t = dym[j] * gain[j];
      dxm[j] = (t - m1 - hm[j] * m2) * rstd[m];
    }
  }
}

// y[rows x out] = x[rows x in] * W[out x in]^T + b.
template <typename T>
void linear_forward(const T* x, const Tensor<T>& w, const Tensor<T>& b,
                    std::size_t rows, std::size_t in, std::size_t out, T* y) {
  matmul_nt(x, w.ptr(), y, rows, in, out, false);
  for (std::size_t m = 0; m < rows; ++m) {
    T* ym = y + m * out;
    for (std::size_t j = 0; j < out; ++j) ym[j] += b[j];
  }
}

// Accumulates dW, db and (optionally) dx for the linear layer above.
template <typename T>
void linear_backward(const T* x, const Tensor<T>& w, const T* dy,
                     std::size_t rows, std::size_t in, std::size_t out,
                     Tensor<T>& dw, Tensor<T>& db, T* dx, bool accumulate_dx) {
  matmul_tn(dy, x, dw.ptr(), rows, out, in, true);
  for (std::size_t m = 0; m < rows; ++m) {
    const T* dym = dy + m * out;
    for (std::size_t j = 0; j < out; ++j) db[j] += dym[j];
  }
  if (dx != nullptr) {
    matmul_nn(dy, w.ptr(), dx, rows, out, in, accumulate_dx);
  }
}

template <typename T>
void fill_dropout_mask(Tensor<T>& mask, double rate, Rng& rng) {
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& v : mask.data) {
    v = rng.next_double() < rate ? T(0) : keep_scale;
  }
}

template <typename T>
void apply_mask(T* x, const Tensor<T>& mask) {
  for (std::size_t i = 0; i < mask.size(); ++i) x[i] *= mask[i];
}

template <typename T>
void check_finite(const T* x, std::size_t n, const std::string& where) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(static_cast<double>(x[i]))) {
      throw NumericError("non-finite activation in " + where);
    }
  }
}

template <typename T>
void add_tensor_param(ParamStore<T>& store, const std::string& name,
                      std::vector<std::size_t> shape) {
  store.tensors[name].reshape(std::move(shape));
}

}  // namespace

void ModelConfig::validate() const {
  // num_layers == 0 is allowed: embeddings + pooler only.
  if (hidden == 0 || heads == 0 || vocab_size == 0 || max_positions == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (hidden % heads != 0) {
    throw ConfigError("hidden (" + std::to_string(hidden) +
                      ") must be divisible by heads (" + std::to_string(heads) +
                      ")");
  }
  if (type_vocab != 2) {
    throw ConfigError("type_vocab must be 2");
  }
}

template <typename T>
ParamStore<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t h = config.hidden;
  const std::size_t e = config.embed();
  const std::size_t f = config.ffn();

  ParamStore<T> store;
  std::vector<std::string> weight_order;  // tensors that get random values

  auto weight = [&](const std::string& name, std::vector<std::size_t> shape) {
    add_tensor_param(store, name, std::move(shape));
    weight_order.push_back(name);
  };
  auto zeros = [&](const std::string& name, std::vector<std::size_t> shape) {
    add_tensor_param(store, name, std::move(shape));
  };
  auto ones = [&](const std::string& name, std::vector<std::size_t> shape) {
    add_tensor_param(store, name, std::move(shape));
    for (auto& v : store.tensors[name].data) v = T(1);
  };

  weight("embeddings.token", {config.vocab_size, e});
  if (e != h) {
    weight("embeddings.projection.weight", {h, e});
    zeros("embeddings.projection.bias", {h});
  }
  weight("embeddings.position", {config.max_positions, h});
  weight("embeddings.segment", {config.type_vocab, h});
  ones("embeddings.norm.gain", {h});
  zeros("embeddings.norm.bias", {h});

  for (std::size_t l = 0; l < config.physical_layers(); ++l) {
    const std::string p = config.layer_prefix(l);
    for (const char* part : {"attention.query", "attention.key",
                             "attention.value", "attention.output"}) {
      weight(p + part + ".weight", {h, h});
      zeros(p + std::string(part) + ".bias", {h});
    }
    ones(p + "attention.norm.gain", {h});
    zeros(p + "attention.norm.bias", {h});
    weight(p + "ffn.inner.weight", {f, h});
    zeros(p + "ffn.inner.bias", {f});
    weight(p + "ffn.output.weight", {h, f});
    zeros(p + "ffn.output.bias", {h});
    ones(p + "ffn.norm.gain", {h});
    zeros(p + "ffn.norm.bias", {h});
  }

  weight("pooler.weight", {h, h});
  zeros("pooler.bias", {h});

  Rng rng(seed);
  for (const auto& name : weight_order) {
    for (auto& v : store.tensors[name].data) {
      v = static_cast<T>(rng.next_truncated_normal(0.02));
    }
  }
  return store;
}

std::uint64_t count_params(const ModelConfig& config) {
  config.validate();
  const std::uint64_t h = config.hidden;
  const std::uint64_t e = config.embed();
  const std::uint64_t f = config.ffn();

  std::uint64_t embeddings = config.vocab_size * e;
  if (e != h) embeddings += e * h + h;   // factorization projection
  embeddings += config.max_positions * h;
  embeddings += config.type_vocab * h;
  embeddings += 2 * h;                   // embedding layer norm

  const std::uint64_t per_layer = 4 * (h * h + h)  // q, k, v, output
                                  + 2 * h          // attention layer norm
                                  + h * f + f      // ffn inner
                                  + f * h + h      // ffn output
                                  + 2 * h;         // ffn layer norm
  const std::uint64_t pooler = h * h + h;
  return embeddings + config.physical_layers() * per_layer + pooler;
}

Batch make_batch(const std::vector<data::PretrainInstance>& instances) {
  std::vector<std::vector<int>> tokens, segments;
  tokens.reserve(instances.size());
  for (const auto& inst : instances) {
    tokens.push_back(inst.token_ids);
    segments.push_back(inst.segment_ids);
  }
  return make_batch(tokens, segments);
}

Batch make_batch(const std::vector<std::vector<int>>& token_rows,
                 const std::vector<std::vector<int>>& segment_rows) {
  if (token_rows.size() != segment_rows.size()) {
    throw DataError("token and segment row counts differ");
  }
  Batch batch;
  batch.rows = token_rows.size();
  for (const auto& row : token_rows) batch.seq = std::max(batch.seq, row.size());
  batch.token_ids.assign(batch.rows * batch.seq, 0);
  batch.segment_ids.assign(batch.rows * batch.seq, 0);
  batch.attention_mask.assign(batch.rows * batch.seq, 0);
  for (std::size_t r = 0; r < batch.rows; ++r) {
    if (token_rows[r].size() != segment_rows[r].size()) {
      throw DataError("token/segment length mismatch in row " +
                      std::to_string(r));
    }
    for (std::size_t s = 0; s < token_rows[r].size(); ++s) {
      batch.token_ids[r * batch.seq + s] = token_rows[r][s];
      batch.segment_ids[r * batch.seq + s] = segment_rows[r][s];
      batch.attention_mask[r * batch.seq + s] = 1;
    }
  }
  return batch;
}

template <typename T>
ForwardResult<T> encoder_forward(const ModelConfig& config,
                                 const ParamStore<T>& params,
                                 const Batch& batch,
                                 const ForwardOptions& options,
                                 EncoderActivations<T>* cache) {
  config.validate();
  const std::size_t R = batch.rows, S = batch.seq;
  const std::size_t M = R * S;
  const std::size_t H = config.hidden;
  const std::size_t E = config.embed();
  const std::size_t heads = config.heads;
  const std::size_t dh = H / heads;
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  if (S > config.max_positions) {
    throw DataError("sequence length " + std::to_string(S) +
                    " exceeds max positions " +
                    std::to_string(config.max_positions));
  }
  for (std::size_t i = 0; i < M; ++i) {
    if (batch.token_ids[i] < 0 ||
        static_cast<std::size_t>(batch.token_ids[i]) >= config.vocab_size) {
      throw DataError("token id out of range: " +
                      std::to_string(batch.token_ids[i]));
    }
    if (batch.segment_ids[i] < 0 ||
        static_cast<std::size_t>(batch.segment_ids[i]) >= config.type_vocab) {
      throw DataError("segment id out of range: " +
                      std::to_string(batch.segment_ids[i]));
    }
  }
  const bool use_dropout = options.dropout > 0.0 && options.rng != nullptr;

  EncoderActivations<T> local;
  EncoderActivations<T>& acts = cache != nullptr ? *cache : local;
  acts.layers.assign(config.num_layers, LayerCache<T>{});

  // Embeddings.
  const bool has_projection = params.has("embeddings.projection.weight");
  const Tensor<T>& token_table = params.at("embeddings.token");
  acts.token_raw.reshape({M, E});
  for (std::size_t i = 0; i < M; ++i) {
    const std::size_t id = static_cast<std::size_t>(batch.token_ids[i]);
    std::memcpy(acts.token_raw.ptr() + i * E, token_table.ptr() + id * E,
                E * sizeof(T));
  }
  Tensor<T> emb_sum({M, H});
  if (has_projection) {
    linear_forward(acts.token_raw.ptr(),
                   params.at("embeddings.projection.weight"),
                   params.at("embeddings.projection.bias"), M, E, H,
                   emb_sum.ptr());
  } else {
    if (E != H) throw ConfigError("embed_dim != hidden requires a projection");
    std::memcpy(emb_sum.ptr(), acts.token_raw.ptr(), M * H * sizeof(T));
  }
  const Tensor<T>& pos_table = params.at("embeddings.position");
  const Tensor<T>& seg_table = params.at("embeddings.segment");
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t m = r * S + s;
      T* row = emb_sum.ptr() + m * H;
      const T* pos = pos_table.ptr() + s * H;
      const T* seg = seg_table.ptr() +
                     static_cast<std::size_t>(batch.segment_ids[m]) * H;
      for (std::size_t j = 0; j < H; ++j) row[j] += pos[j] + seg[j];
    }
  }

  Tensor<T> x({M, H});
  acts.emb_xhat.reshape({M, H});
  acts.emb_rstd.assign(M, T(0));
  layer_norm_forward(emb_sum.ptr(), params.at("embeddings.norm.gain").ptr(),
                     params.at("embeddings.norm.bias").ptr(), M, H, x.ptr(),
                     acts.emb_xhat.ptr(), acts.emb_rstd.data());
  if (use_dropout) {
    acts.emb_drop_mask.reshape({M, H});
    fill_dropout_mask(acts.emb_drop_mask, options.dropout, *options.rng);
    apply_mask(x.ptr(), acts.emb_drop_mask);
  }

  // Transformer stack.
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const std::string p = config.layer_prefix(l);
    LayerCache<T>& lc = acts.layers[l];
    lc.input = x;
    lc.q.reshape({M, H});
    lc.k.reshape({M, H});
    lc.v.reshape({M, H});
    linear_forward(x.ptr(), params.at(p + "attention.query.weight"),
                   params.at(p + "attention.query.bias"), M, H, H, lc.q.ptr());
    linear_forward(x.ptr(), params.at(p + "attention.key.weight"),
                   params.at(p + "attention.key.bias"), M, H, H, lc.k.ptr());
    linear_forward(x.ptr(), params.at(p + "attention.value.weight"),
                   params.at(p + "attention.value.bias"), M, H, H, lc.v.ptr());

    lc.attn_probs.reshape({R, heads, S, S});
    if (use_dropout) {
      lc.attn_drop_mask.reshape({R, heads, S, S});
      fill_dropout_mask(lc.attn_drop_mask, options.dropout, *options.rng);
    }
    lc.context.reshape({M, H});
    std::vector<T> scores(S);
    for (std::size_t r = 0; r < R; ++r) {
      const std::uint8_t* mask = batch.attention_mask.data() + r * S;
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < S; ++i) {
          const T* qi = lc.q.ptr() + (r * S + i) * H + h * dh;
          T max_score = T(0);
          bool any = false;
          for (std::size_t j = 0; j < S; ++j) {
            if (!mask[j]) continue;
            const T* kj = lc.k.ptr() + (r * S + j) * H + h * dh;
            T dot = 0;
            for (std::size_t d = 0; d < dh; ++d) dot += qi[d] * kj[d];
            dot *= inv_sqrt_dh;
            scores[j] = dot;
            if (!any || dot > max_score) {
              max_score = dot;
              any = true;
            }
          }
          T* probs =
              lc.attn_probs.ptr() + ((r * heads + h) * S + i) * S;
          T denom = 0;
          for (std::size_t j = 0; j < S; ++j) {
            if (mask[j]) {
              probs[j] = std::exp(scores[j] - max_score);
              denom += probs[j];
            } else {
              probs[j] = T(0);
            }
          }
          if (denom > T(0)) {
            for (std::size_t j = 0; j < S; ++j) probs[j] /= denom;
          }
          // Context for this query.
          T* ctx = lc.context.ptr() + (r * S + i) * H + h * dh;
          std::fill(ctx, ctx + dh, T(0));
          const T* drop =
              use_dropout
                  ? lc.attn_drop_mask.ptr() + ((r * heads + h) * S + i) * S
                  : nullptr;
          for (std::size_t j = 0; j < S; ++j) {
            T pj = probs[j];
            if (drop != nullptr) pj *= drop[j];
            if (pj == T(0)) continue;
            const T* vj = lc.v.ptr() + (r * S + j) * H + h * dh;
            for (std::size_t d = 0; d < dh; ++d) ctx[d] += pj * vj[d];
          }
        }
      }
    }

    Tensor<T> attn({M, H});
    linear_forward(lc.context.ptr(), params.at(p + "attention.output.weight"),
                   params.at(p + "attention.output.bias"), M, H, H,
                   attn.ptr());
    if (use_dropout) {
      lc.attn_out_mask.reshape({M, H});
      fill_dropout_mask(lc.attn_out_mask, options.dropout, *options.rng);
      apply_mask(attn.ptr(), lc.attn_out_mask);
    }
    for (std::size_t i = 0; i < M * H; ++i) attn[i] += x[i];

    lc.xhat1.reshape({M, H});
    lc.rstd1.assign(M, T(0));
    lc.mid.reshape({M, H});
    layer_norm_forward(attn.ptr(), params.at(p + "attention.norm.gain").ptr(),
                       params.at(p + "attention.norm.bias").ptr(), M, H,
                       lc.mid.ptr(), lc.xhat1.ptr(), lc.rstd1.data());

    const std::size_t F = config.ffn();
    lc.ffn_pre.reshape({M, F});
    linear_forward(lc.mid.ptr(), params.at(p + "ffn.inner.weight"),
                   params.at(p + "ffn.inner.bias"), M, H, F, lc.ffn_pre.ptr());
    lc.ffn_act.reshape({M, F});
    for (std::size_t i = 0; i < M * F; ++i) lc.ffn_act[i] = gelu(lc.ffn_pre[i]);

    Tensor<T> ffn_out({M, H});
    linear_forward(lc.ffn_act.ptr(), params.at(p + "ffn.output.weight"),
                   params.at(p + "ffn.output.bias"), M, F, H, ffn_out.ptr());
    if (use_dropout) {
      lc.ffn_out_mask.reshape({M, H});
      fill_dropout_mask(lc.ffn_out_mask, options.dropout, *options.rng);
      apply_mask(ffn_out.ptr(), lc.ffn_out_mask);
    }
    for (std::size_t i = 0; i < M * H; ++i) ffn_out[i] += lc.mid[i];

    lc.xhat2.reshape({M, H});
    lc.rstd2.assign(M, T(0));
    layer_norm_forward(ffn_out.ptr(), params.at(p + "ffn.norm.gain").ptr(),
                       params.at(p + "ffn.norm.bias").ptr(), M, H, x.ptr(),
                       lc.xhat2.ptr(), lc.rstd2.data());
    if (options.check_finite) {
      check_finite(x.ptr(), M * H, "layer " + std::to_string(l));
    }
  }

  acts.final_states = x;

  // Pooler: tanh-affine of the [CLS] state.
  ForwardResult<T> result;
  result.sequence.shape = {R, S, H};
  result.sequence.data = x.data;
  Tensor<T> cls({R, H});
  for (std::size_t r = 0; r < R; ++r) {
    std::memcpy(cls.ptr() + r * H, x.ptr() + (r * S) * H, H * sizeof(T));
  }
  result.pooled.reshape({R, H});
  linear_forward(cls.ptr(), params.at("pooler.weight"),
                 params.at("pooler.bias"), R, H, H, result.pooled.ptr());
  for (auto& v : result.pooled.data) v = std::tanh(v);
  if (options.check_finite) {
    check_finite(result.pooled.ptr(), R * H, "pooler");
  }
  acts.pooled = result.pooled;
  return result;
}

template <typename T>
void encoder_backward(const ModelConfig& config, const ParamStore<T>& params,
                      const Batch& batch, const EncoderActivations<T>& cache,
                      const Tensor<T>& d_sequence, const Tensor<T>& d_pooled,
                      ParamStore<T>& grads) {
  const std::size_t R = batch.rows, S = batch.seq;
  const std::size_t M = R * S;
  const std::size_t H = config.hidden;
  const std::size_t E = config.embed();
  const std::size_t heads = config.heads;
  const std::size_t dh = H / heads;
  const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(dh));
  const bool use_dropout = cache.emb_drop_mask.size() > 0;

  Tensor<T> dx({M, H});
  if (d_sequence.size() == M * H) {
    std::memcpy(dx.ptr(), d_sequence.ptr(), M * H * sizeof(T));
  }

  // Pooler backward.
  if (d_pooled.size() == R * H) {
    Tensor<T> dz({R, H});
    for (std::size_t i = 0; i < R * H; ++i) {
      const T y = cache.pooled[i];
      dz[i] = d_pooled[i] * (T(1) - y * y);
    }
    Tensor<T> cls({R, H});
    for (std::size_t r = 0; r < R; ++r) {
      std::memcpy(cls.ptr() + r * H, cache.final_states.ptr() + (r * S) * H,
                  H * sizeof(T));
    }
    Tensor<T> dcls({R, H});
    linear_backward(cls.ptr(), params.at("pooler.weight"), dz.ptr(), R, H, H,
                    grads.at("pooler.weight"), grads.at("pooler.bias"),
                    dcls.ptr(), false);
    for (std::size_t r = 0; r < R; ++r) {
      T* row = dx.ptr() + (r * S) * H;
      const T* d = dcls.ptr() + r * H;
      for (std::size_t j = 0; j < H; ++j) row[j] += d[j];
    }
  }

  const std::size_t F = config.ffn();
  Tensor<T> dsum({M, H}), dmid({M, H}), dbranch({M, H});
  Tensor<T> dpre({M, F}), dctx({M, H});
  Tensor<T> dq({M, H}), dk({M, H}), dv({M, H});
  std::vector<T> dprobs(S);

  for (std::size_t l = config.num_layers; l-- > 0;) {
    const std::string p = config.layer_prefix(l);
    const LayerCache<T>& lc = cache.layers[l];

    // LN2 backward.
    layer_norm_backward(dx.ptr(), lc.xhat2.ptr(), lc.rstd2.data(),
                        params.at(p + "ffn.norm.gain").ptr(), M, H, dsum.ptr(),
                        grads.at(p + "ffn.norm.gain").ptr(),
                        grads.at(p + "ffn.norm.bias").ptr());
    // Residual: dsum feeds both the FFN branch and mid.
    std::memcpy(dmid.ptr(), dsum.ptr(), M * H * sizeof(T));
    std::memcpy(dbranch.ptr(), dsum.ptr(), M * H * sizeof(T));
    if (use_dropout) apply_mask(dbranch.ptr(), lc.ffn_out_mask);

    Tensor<T> dact({M, F});
    linear_backward(lc.ffn_act.ptr(), params.at(p + "ffn.output.weight"),
                    dbranch.ptr(), M, F, H, grads.at(p + "ffn.output.weight"),
                    grads.at(p + "ffn.output.bias"), dact.ptr(), false);
    for (std::size_t i = 0; i < M * F; ++i) {
      dpre[i] = dact[i] * gelu_grad(lc.ffn_pre[i]);
    }
    linear_backward(lc.mid.ptr(), params.at(p + "ffn.inner.weight"),
                    dpre.ptr(), M, H, F, grads.at(p + "ffn.inner.weight"),
                    grads.at(p + "ffn.inner.bias"), dmid.ptr(), true);

    // LN1 backward.
    layer_norm_backward(dmid.ptr(), lc.xhat1.ptr(), lc.rstd1.data(),
                        params.at(p + "attention.norm.gain").ptr(), M, H,
                        dsum.ptr(), grads.at(p + "attention.norm.gain").ptr(),
                        grads.at(p + "attention.norm.bias").ptr());
    // dsum feeds the attention branch and the layer input (via residual).
    std::memcpy(dx.ptr(), dsum.ptr(), M * H * sizeof(T));
    std::memcpy(dbranch.ptr(), dsum.ptr(), M * H * sizeof(T));
    if (use_dropout) apply_mask(dbranch.ptr(), lc.attn_out_mask);

    linear_backward(lc.context.ptr(),
                    params.at(p + "attention.output.weight"), dbranch.ptr(),
                    M, H, H, grads.at(p + "attention.output.weight"),
                    grads.at(p + "attention.output.bias"), dctx.ptr(), false);

    std::fill(dq.data.begin(), dq.data.end(), T(0));
    std::fill(dk.data.begin(), dk.data.end(), T(0));
    std::fill(dv.data.begin(), dv.data.end(), T(0));
    for (std::size_t r = 0; r < R; ++r) {
      const std::uint8_t* mask = batch.attention_mask.data() + r * S;
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < S; ++i) {
          const T* probs =
              lc.attn_probs.ptr() + ((r * heads + h) * S + i) * S;
          const T* drop =
              use_dropout
                  ? lc.attn_drop_mask.ptr() + ((r * heads + h) * S + i) * S
                  : nullptr;
          const T* dctx_i = dctx.ptr() + (r * S + i) * H + h * dh;
          // dprobs and dV.
          for (std::size_t j = 0; j < S; ++j) {
            if (!mask[j]) {
              dprobs[j] = T(0);
              continue;
            }
            const T* vj = lc.v.ptr() + (r * S + j) * H + h * dh;
            T acc = 0;
            for (std::size_t d = 0; d < dh; ++d) acc += dctx_i[d] * vj[d];
            const T m = drop != nullptr ? drop[j] : T(1);
            dprobs[j] = acc * m;
            const T pj = probs[j] * m;
            if (pj != T(0)) {
              T* dvj = dv.ptr() + (r * S + j) * H + h * dh;
              for (std::size_t d = 0; d < dh; ++d) {
                dvj[d] += pj * dctx_i[d];
              }
            }
          }
          // Softmax backward: ds = p .* (dp - sum(dp .* p)).
          T dot = 0;
          for (std::size_t j = 0; j < S; ++j) {
            if (mask[j]) dot += dprobs[j] * probs[j];
          }
          const T* qi = lc.q.ptr() + (r * S + i) * H + h * dh;
          T* dqi = dq.ptr() + (r * S + i) * H + h * dh;
          for (std::size_t j = 0; j < S; ++j) {
            if (!mask[j]) continue;
            const T ds = probs[j] * (dprobs[j] - dot) * inv_sqrt_dh;
            if (ds == T(0)) continue;
            const T* kj = lc.k.ptr() + (r * S + j) * H + h * dh;
            T* dkj = dk.ptr() + (r * S + j) * H + h * dh;
            for (std::size_t d = 0; d < dh; ++d) {
              dqi[d] += ds * kj[d];
              dkj[d] += ds * qi[d];
            }
          }
        }
      }
    }

    linear_backward(lc.input.ptr(), params.at(p + "attention.query.weight"),
                    dq.ptr(), M, H, H, grads.at(p + "attention.query.weight"),
                    grads.at(p + "attention.query.bias"), dx.ptr(), true);
    linear_backward(lc.input.ptr(), params.at(p + "attention.key.weight"),
                    dk.ptr(), M, H, H, grads.at(p + "attention.key.weight"),
                    grads.at(p + "attention.key.bias"), dx.ptr(), true);
    linear_backward(lc.input.ptr(), params.at(p + "attention.value.weight"),
                    dv.ptr(), M, H, H, grads.at(p + "attention.value.weight"),
                    grads.at(p + "attention.value.bias"), dx.ptr(), true);
  }

  // Embedding backward.
  if (use_dropout) apply_mask(dx.ptr(), cache.emb_drop_mask);
  Tensor<T> demb({M, H});
  layer_norm_backward(dx.ptr(), cache.emb_xhat.ptr(), cache.emb_rstd.data(),
                      params.at("embeddings.norm.gain").ptr(), M, H,
                      demb.ptr(), grads.at("embeddings.norm.gain").ptr(),
                      grads.at("embeddings.norm.bias").ptr());

  Tensor<T>& dpos = grads.at("embeddings.position");
  Tensor<T>& dseg = grads.at("embeddings.segment");
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t m = r * S + s;
      const T* d = demb.ptr() + m * H;
      T* prow = dpos.ptr() + s * H;
      T* srow = dseg.ptr() +
                static_cast<std::size_t>(batch.segment_ids[m]) * H;
      for (std::size_t j = 0; j < H; ++j) {
        prow[j] += d[j];
        srow[j] += d[j];
      }
    }
  }

  Tensor<T>& dtok = grads.at("embeddings.token");
  if (params.has("embeddings.projection.weight")) {
    Tensor<T> draw({M, E});
    linear_backward(cache.token_raw.ptr(),
                    params.at("embeddings.projection.weight"), demb.ptr(), M,
                    E, H, grads.at("embeddings.projection.weight"),
                    grads.at("embeddings.projection.bias"), draw.ptr(), false);
    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t id = static_cast<std::size_t>(batch.token_ids[m]);
      T* row = dtok.ptr() + id * E;
      const T* d = draw.ptr() + m * E;
      for (std::size_t j = 0; j < E; ++j) row[j] += d[j];
    }
  } else {
    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t id = static_cast<std::size_t>(batch.token_ids[m]);
      T* row = dtok.ptr() + id * E;
      const T* d = demb.ptr() + m * H;
      for (std::size_t j = 0; j < E; ++j) row[j] += d[j];
    }
  }
}

GradCheckResult gradient_check(
    ParamStore<double>& params,
    const std::function<std::pair<double, ParamStore<double>>()>&
        loss_and_grads,
    const std::function<double()>& loss_value, double epsilon,
    std::size_t samples, std::uint64_t seed) {
  const auto [base_loss, grads] = loss_and_grads();
  (void)base_loss;

  std::vector<std::pair<std::string, std::size_t>> index;
  std::size_t total = 0;
  for (const auto& [name, t] : params.tensors) {
    index.emplace_back(name, t.size());
    total += t.size();
  }
  Rng rng(seed);
  GradCheckResult result;
  for (std::size_t s = 0; s < samples; ++s) {
    std::size_t flat = static_cast<std::size_t>(rng.next_below(total));
    std::string name;
    for (const auto& [n, size] : index) {
      if (flat < size) {
        name = n;
        break;
      }
      flat -= size;
    }
    Tensor<double>& t = params.at(name);
    const double original = t[flat];
    t[flat] = original + epsilon;
    const double plus = loss_value();
    t[flat] = original - epsilon;
    const double minus = loss_value();
    t[flat] = original;
    const double numeric = (plus - minus) / (2.0 * epsilon);
    const double analytic = grads.at(name)[flat];
    const double denom =
        std::max(std::max(std::abs(analytic), std::abs(numeric)), 1e-6);
    result.max_relative_error =
        std::max(result.max_relative_error, std::abs(analytic - numeric) / denom);
    ++result.checked;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'T', 'L', 'B', 'C', 'K', '1', '\n'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  explicit Reader(const std::string& b) : buf(b) {}
  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw DataError("truncated checkpoint file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)]))
           << (8 * i);
    }
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)]))
           << (8 * i);
    }
    pos += 8;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::map<std::string, std::string> config_to_map(const ModelConfig& c) {
  return {
      {"num_layers", std::to_string(c.num_layers)},
      {"hidden", std::to_string(c.hidden)},
      {"heads", std::to_string(c.heads)},
      {"ffn_inner", std::to_string(c.ffn())},
      {"vocab_size", std::to_string(c.vocab_size)},
      {"max_positions", std::to_string(c.max_positions)},
      {"embed_dim", std::to_string(c.embed())},
      {"share_layers", c.share_layers ? "true" : "false"},
      {"type_vocab", std::to_string(c.type_vocab)},
  };
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& config,
                     const ParamStore<float>& params,
                     const std::map<std::string, std::string>& extra) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  auto kv = config_to_map(config);
  for (const auto& [k, v] : extra) kv[k] = v;
  put_u32(out, static_cast<std::uint32_t>(kv.size()));
  for (const auto& [k, v] : kv) {
    put_string(out, k);
    put_string(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& [name, t] : params.tensors) {
    put_string(out, name);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) put_u64(out, d);
    static_assert(sizeof(float) == 4);
    for (float v : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string raw = read_file(path);
  if (raw.size() < sizeof(kMagic) ||
      std::memcmp(raw.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a checkpoint file (bad magic): " + path);
  }
  Reader r(raw);
  r.pos = sizeof(kMagic);
  Checkpoint ckpt;
  std::map<std::string, std::string> kv;
  const std::uint32_t n_kv = r.u32();
  for (std::uint32_t i = 0; i < n_kv; ++i) {
    std::string k = r.str();
    kv[k] = r.str();
  }
  auto take = [&kv](const char* key, const std::string& fallback) {
    auto it = kv.find(key);
    if (it == kv.end()) return fallback;
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  ckpt.config.num_layers = std::stoull(take("num_layers", "0"));
  ckpt.config.hidden = std::stoull(take("hidden", "0"));
  ckpt.config.heads = std::stoull(take("heads", "0"));
  ckpt.config.ffn_inner = std::stoull(take("ffn_inner", "0"));
  ckpt.config.vocab_size = std::stoull(take("vocab_size", "0"));
  ckpt.config.max_positions = std::stoull(take("max_positions", "0"));
  ckpt.config.embed_dim = std::stoull(take("embed_dim", "0"));
  ckpt.config.share_layers = take("share_layers", "false") == "true";
  ckpt.config.type_vocab = std::stoull(take("type_vocab", "2"));
  ckpt.extra = kv;

  const std::uint32_t n_tensors = r.u32();
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape;
    std::size_t total = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<std::size_t>(r.u64()));
      total *= shape.back();
    }
    Tensor<float> t;
    t.shape = shape;
    t.data.resize(total);
    for (std::size_t j = 0; j < total; ++j) {
      const std::uint32_t bits = r.u32();
      float v;
      std::memcpy(&v, &bits, 4);
      t.data[j] = v;
    }
    ckpt.params.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

// Explicit instantiations: float for the artifact, double for numerical
// verification.
template ParamStore<float> init_params<float>(const ModelConfig&,
                                              std::uint64_t);
template ParamStore<double> init_params<double>(const ModelConfig&,
                                                std::uint64_t);
template ForwardResult<float> encoder_forward<float>(
    const ModelConfig&, const ParamStore<float>&, const Batch&,
    const ForwardOptions&, EncoderActivations<float>*);
template ForwardResult<double> encoder_forward<double>(
    const ModelConfig&, const ParamStore<double>&, const Batch&,
    const ForwardOptions&, EncoderActivations<double>*);
template void encoder_backward<float>(const ModelConfig&,
                                      const ParamStore<float>&, const Batch&,
                                      const EncoderActivations<float>&,
                                      const Tensor<float>&,
                                      const Tensor<float>&,
                                      ParamStore<float>&);
template void encoder_backward<double>(const ModelConfig&,
                                       const ParamStore<double>&, const Batch&,
                                       const EncoderActivations<double>&,
                                       const Tensor<double>&,
                                       const Tensor<double>&,
                                       ParamStore<double>&);

}  // namespace ptlab::nn
