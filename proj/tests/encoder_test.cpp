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
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "ptlab/common.hpp"

namespace fs = std::filesystem;
using namespace ptlab;
using nn::Batch;
using nn::ModelConfig;

namespace {

ModelConfig tiny_config() {
  ModelConfig config;
  config.num_layers = 2;
  config.hidden = 16;
  config.heads = 2;
  config.vocab_size = 50;
  config.max_positions = 32;
  return config;
}

Batch random_batch(const ModelConfig& config, std::size_t rows,
                   std::size_t max_row_len, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<int>> tokens, segments;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t len = 2 + rng.next_below(max_row_len - 1);
    std::vector<int> t{2};  // [CLS]
    std::vector<int> s{0};
    for (std::size_t i = 1; i < len; ++i) {
      t.push_back(static_cast<int>(5 + rng.next_below(config.vocab_size - 5)));
      s.push_back(i > len / 2 ? 1 : 0);
    }
    tokens.push_back(std::move(t));
    segments.push_back(std::move(s));
  }
  return nn::make_batch(tokens, segments);
}

}  // namespace

TEST_CASE("init_params is deterministic per seed") {
  const ModelConfig config = tiny_config();
  const auto a = nn::init_params<float>(config, 9);
  const auto b = nn::init_params<float>(config, 9);
  REQUIRE(a.tensors.size() == b.tensors.size());
  for (const auto& [name, t] : a.tensors) {
    CHECK(t.data == b.at(name).data);
  }
  const auto c = nn::init_params<float>(config, 10);
  CHECK(a.at("pooler.weight").data != c.at("pooler.weight").data);
}

TEST_CASE("init_params samples weights with std 0.02") {
  ModelConfig config = tiny_config();
  config.vocab_size = 10000;
  config.hidden = 100;
  config.heads = 2;
  config.num_layers = 0;
  const auto params = nn::init_params<double>(config, 4);
  const auto& emb = params.at("embeddings.token");
  REQUIRE(emb.size() == 1000000);
  double mean = 0;
  for (double v : emb.data) mean += v;
  mean /= static_cast<double>(emb.size());
  double var = 0;
  for (double v : emb.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(emb.size());
  CHECK(std::abs(std::sqrt(var) - 0.02) < 0.001);
}

TEST_CASE("layer norm gains start at one and biases at zero") {
  const auto params = nn::init_params<float>(tiny_config(), 0);
  for (float v : params.at("embeddings.norm.gain").data) CHECK(v == 1.0f);
  for (float v : params.at("embeddings.norm.bias").data) CHECK(v == 0.0f);
  for (float v : params.at("layer_0.attention.query.bias").data) {
    CHECK(v == 0.0f);
  }
}

TEST_CASE("shared layers allocate exactly one physical parameter set") {
  ModelConfig config = tiny_config();
  config.share_layers = true;
  config.num_layers = 6;
  const auto params = nn::init_params<float>(config, 1);
  CHECK(params.has("layer_shared.attention.query.weight"));
  CHECK_FALSE(params.has("layer_0.attention.query.weight"));
  std::size_t layer_tensors = 0;
  for (const auto& [name, t] : params.tensors) {
    if (name.rfind("layer_", 0) == 0) ++layer_tensors;
  }
  CHECK(layer_tensors == 16);  // one layer's worth
}

TEST_CASE("count_params reproduces the published parameter budgets") {
  ModelConfig bert;
  bert.num_layers = 12;
  bert.hidden = 768;
  bert.heads = 12;
  bert.vocab_size = 30000;
  bert.max_positions = 512;
  const std::uint64_t bert_count = nn::count_params(bert);
  CHECK(bert_count >= 105000000ull);
  CHECK(bert_count <= 115000000ull);

  ModelConfig albert = bert;
  albert.embed_dim = 128;
  albert.share_layers = true;
  const std::uint64_t albert_count = nn::count_params(albert);
  CHECK(albert_count >= 10000000ull);
  CHECK(albert_count <= 14000000ull);
}

TEST_CASE("count_params is layer-count-independent under sharing") {
  ModelConfig config = tiny_config();
  config.share_layers = true;
  for (std::size_t l : {1, 2, 4, 8, 24}) {
    ModelConfig a = config, b = config;
    a.num_layers = l;
    b.num_layers = 2 * l;
    CHECK(nn::count_params(a) == nn::count_params(b));
  }
}

TEST_CASE("count_params matches the closed form at zero layers") {
  ModelConfig config = tiny_config();
  config.num_layers = 0;
  // Embeddings (token, position, segment), embedding norm, pooler, by hand.
  const std::uint64_t v = config.vocab_size, h = config.hidden,
                      p = config.max_positions;
  const std::uint64_t expected =
      v * h + p * h + 2 * h + 2 * h + (h * h + h);
  CHECK(nn::count_params(config) == expected);
}

TEST_CASE("count_params agrees with the actual store sizes") {
  // Dual route: closed form vs. allocated tensors.
  for (bool shared : {false, true}) {
    for (std::size_t embed : {std::size_t{0}, std::size_t{8}}) {
      ModelConfig config = tiny_config();
      config.share_layers = shared;
      config.embed_dim = embed;
      const auto params = nn::init_params<float>(config, 3);
      CHECK(nn::count_params(config) == params.total_size());
    }
  }
}

TEST_CASE("config validation rejects inconsistent dimensions") {
  ModelConfig config = tiny_config();
  config.heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(nn::init_params<float>(config, 0), ConfigError);
  CHECK_THROWS_AS(nn::count_params(config), ConfigError);
}

TEST_CASE("forward keeps identical all-pad rows identical and finite") {
  const ModelConfig config = tiny_config();
  const auto params = nn::init_params<float>(config, 5);
  Batch batch;
  batch.rows = 4;
  batch.seq = 8;
  batch.token_ids.assign(4 * 8, 0);
  batch.segment_ids.assign(4 * 8, 0);
  batch.attention_mask.assign(4 * 8, 0);
  for (std::size_t r = 0; r < 4; ++r) {
    batch.token_ids[r * 8] = 2;  // [CLS]
    batch.attention_mask[r * 8] = 1;
  }
  const auto result = nn::encoder_forward<float>(config, params, batch);
  for (std::size_t j = 0; j < config.hidden; ++j) {
    CHECK(std::isfinite(result.pooled[j]));
    for (std::size_t r = 1; r < 4; ++r) {
      CHECK(result.pooled[r * config.hidden + j] == result.pooled[j]);
    }
  }
}

TEST_CASE("attention rows sum to one over unmasked keys for every head") {
  const ModelConfig config = tiny_config();
  const auto params = nn::init_params<float>(config, 6);
  const Batch batch = random_batch(config, 3, 10, 8);
  nn::EncoderActivations<float> cache;
  nn::encoder_forward<float>(config, params, batch, {}, &cache);
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    const auto& probs = cache.layers[l].attn_probs;
    for (std::size_t r = 0; r < batch.rows; ++r) {
      for (std::size_t h = 0; h < config.heads; ++h) {
        for (std::size_t i = 0; i < batch.seq; ++i) {
          double total = 0;
          for (std::size_t j = 0; j < batch.seq; ++j) {
            const float p =
                probs[((r * config.heads + h) * batch.seq + i) * batch.seq +
                      j];
            if (batch.attention_mask[r * batch.seq + j] == 0) {
              CHECK(p == 0.0f);
            }
            total += p;
          }
          CHECK(total == doctest::Approx(1.0).epsilon(1e-5));
        }
      }
    }
  }
}

TEST_CASE("permuting the batch permutes the outputs bit-exactly") {
  const ModelConfig config = tiny_config();
  const auto params = nn::init_params<float>(config, 7);
  Batch batch = random_batch(config, 4, 9, 12);
  const auto base = nn::encoder_forward<float>(config, params, batch);

  Batch reversed = batch;
  const std::size_t S = batch.seq;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const std::size_t src = batch.rows - 1 - r;
    for (std::size_t s = 0; s < S; ++s) {
      reversed.token_ids[r * S + s] = batch.token_ids[src * S + s];
      reversed.segment_ids[r * S + s] = batch.segment_ids[src * S + s];
      reversed.attention_mask[r * S + s] = batch.attention_mask[src * S + s];
    }
  }
  const auto flipped = nn::encoder_forward<float>(config, params, reversed);
  const std::size_t H = config.hidden;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const std::size_t src = batch.rows - 1 - r;
    for (std::size_t j = 0; j < H; ++j) {
      CHECK(flipped.pooled[r * H + j] == base.pooled[src * H + j]);
    }
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t j = 0; j < H; ++j) {
        CHECK(flipped.sequence[(r * S + s) * H + j] ==
              base.sequence[(src * S + s) * H + j]);
      }
    }
  }
}

TEST_CASE("identity projection reproduces the unfactorized forward") {
  const ModelConfig config = tiny_config();
  const auto params = nn::init_params<float>(config, 11);
  const Batch batch = random_batch(config, 2, 8, 3);
  const auto plain = nn::encoder_forward<float>(config, params, batch);

  auto projected = params;
  nn::Tensor<float> identity({config.hidden, config.hidden});
  for (std::size_t i = 0; i < config.hidden; ++i) {
    identity[i * config.hidden + i] = 1.0f;
  }
  projected.tensors["embeddings.projection.weight"] = identity;
  projected.tensors["embeddings.projection.bias"] =
      nn::Tensor<float>({config.hidden});
  const auto faux = nn::encoder_forward<float>(config, projected, batch);
  for (std::size_t i = 0; i < plain.pooled.size(); ++i) {
    CHECK(faux.pooled[i] ==
          doctest::Approx(plain.pooled[i]).epsilon(1e-5));
  }
  for (std::size_t i = 0; i < plain.sequence.size(); ++i) {
    CHECK(faux.sequence[i] ==
          doctest::Approx(plain.sequence[i]).epsilon(1e-5));
  }
}

TEST_CASE("padded positions never influence unpadded outputs") {
  const ModelConfig config = tiny_config();
  const auto params = nn::init_params<float>(config, 13);
  Batch batch = random_batch(config, 2, 6, 19);
  const auto base = nn::encoder_forward<float>(config, params, batch);

  Batch tampered = batch;
  for (std::size_t i = 0; i < tampered.token_ids.size(); ++i) {
    if (tampered.attention_mask[i] == 0) {
      tampered.token_ids[i] = 49;
      tampered.segment_ids[i] = 1;
    }
  }
  const auto after = nn::encoder_forward<float>(config, params, tampered);
  const std::size_t H = config.hidden;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    for (std::size_t s = 0; s < batch.seq; ++s) {
      if (batch.attention_mask[r * batch.seq + s] == 0) continue;
      for (std::size_t j = 0; j < H; ++j) {
        CHECK(after.sequence[(r * batch.seq + s) * H + j] ==
              base.sequence[(r * batch.seq + s) * H + j]);
      }
    }
    for (std::size_t j = 0; j < H; ++j) {
      CHECK(after.pooled[r * H + j] == base.pooled[r * H + j]);
    }
  }
}

TEST_CASE("forward rejects out-of-range inputs") {
  const ModelConfig config = tiny_config();
  const auto params = nn::init_params<float>(config, 1);
  Batch batch = random_batch(config, 1, 6, 2);
  batch.token_ids[1] = static_cast<int>(config.vocab_size);
  CHECK_THROWS_AS(nn::encoder_forward<float>(config, params, batch),
                  DataError);
}

TEST_CASE("forward names the layer when activations go non-finite") {
  const ModelConfig config = tiny_config();
  auto params = nn::init_params<float>(config, 2);
  for (auto& v : params.at("layer_1.ffn.inner.weight").data) {
    v = std::numeric_limits<float>::infinity();
  }
  const Batch batch = random_batch(config, 1, 6, 2);
  CHECK_THROWS_WITH_AS(nn::encoder_forward<float>(config, params, batch),
                       doctest::Contains("layer 1"), NumericError);
}

TEST_CASE("zero-layer encoder still produces pooled output") {
  ModelConfig config = tiny_config();
  config.num_layers = 0;
  const auto params = nn::init_params<float>(config, 3);
  const Batch batch = random_batch(config, 2, 5, 4);
  const auto result = nn::encoder_forward<float>(config, params, batch);
  for (float v : result.pooled.data) CHECK(std::isfinite(v));
}

TEST_CASE("checkpoints round-trip config, extras, and tensors") {
  ModelConfig config = tiny_config();
  config.share_layers = true;
  config.embed_dim = 8;
  const auto params = nn::init_params<float>(config, 21);
  const fs::path dir = fs::temp_directory_path() / "ptlab_ckpt";
  fs::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();
  nn::save_checkpoint(path, config, params, {{"note", "test"}});

  const nn::Checkpoint back = nn::load_checkpoint(path);
  CHECK(back.config.num_layers == config.num_layers);
  CHECK(back.config.hidden == config.hidden);
  CHECK(back.config.heads == config.heads);
  CHECK(back.config.vocab_size == config.vocab_size);
  CHECK(back.config.max_positions == config.max_positions);
  CHECK(back.config.embed() == config.embed());
  CHECK(back.config.share_layers == config.share_layers);
  CHECK(back.extra.at("note") == "test");
  REQUIRE(back.params.tensors.size() == params.tensors.size());
  for (const auto& [name, t] : params.tensors) {
    CHECK(back.params.at(name).shape == t.shape);
    CHECK(back.params.at(name).data == t.data);
  }

  write_file((dir / "junk.ckpt").string(), "not a checkpoint");
  CHECK_THROWS_AS(nn::load_checkpoint((dir / "junk.ckpt").string()),
                  DataError);
}
