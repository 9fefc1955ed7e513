// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/model_config.hpp"

#include "psyadapter/errors.hpp"

namespace psyadapter {

NLOHMANN_JSON_SERIALIZE_ENUM(FfnKind, {{FfnKind::gelu_mlp, "gelu_mlp"}, {FfnKind::gated, "gated"}})
NLOHMANN_JSON_SERIALIZE_ENUM(NormKind, {{NormKind::layer, "layer"}, {NormKind::rms, "rms"}})
NLOHMANN_JSON_SERIALIZE_ENUM(PositionKind,
                             {{PositionKind::learned, "learned"}, {PositionKind::rotary, "rotary"}})

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (n_layers == 0) fail("n_layers must be >= 1");
  if (d_model == 0) fail("d_model must be >= 1");
  if (n_heads == 0) fail("n_heads must be >= 1");
  if (n_kv_heads == 0) fail("n_kv_heads must be >= 1");
  if (d_head == 0) fail("d_head must be >= 1");
  if (d_ff == 0) fail("d_ff must be >= 1");
  if (vocab_size == 0) fail("vocab_size must be >= 1");
  if (max_seq_len == 0) fail("max_seq_len must be >= 1");
  if (n_heads % n_kv_heads != 0) {
    fail("n_heads (" + std::to_string(n_heads) + ") must be a multiple of n_kv_heads (" +
         std::to_string(n_kv_heads) + ")");
  }
}

void ModelConfig::validate_runnable() const {
  validate();
  if (ffn != FfnKind::gelu_mlp || norm != NormKind::layer ||
      positions != PositionKind::learned || linear_bias) {
    throw ConfigError(
        "invalid model config: only learned positions, LayerNorm, GELU MLP and bias-free "
        "projections can be instantiated; this layout is accounting-only");
  }
  if (d_model != n_heads * d_head) {
    throw ConfigError("invalid model config: d_model (" + std::to_string(d_model) +
                      ") must equal n_heads * d_head (" + std::to_string(n_heads * d_head) + ")");
  }
}

ModelConfig toy_config() { return ModelConfig{}; }

ModelConfig gemma2b_like() {
  ModelConfig c;
  c.n_layers = 18;
  c.d_model = 2048;
  c.n_heads = 8;
  c.n_kv_heads = 1;
  c.d_head = 256;
  c.d_ff = 16384;
  c.vocab_size = 256000;
  c.max_seq_len = 8192;
  c.tied_embeddings = true;
  c.ffn = FfnKind::gated;
  c.norm = NormKind::rms;
  c.positions = PositionKind::rotary;
  return c;
}

ModelConfig gpt2large_like() {
  ModelConfig c;
  c.n_layers = 36;
  c.d_model = 1280;
  c.n_heads = 20;
  c.n_kv_heads = 20;
  c.d_head = 64;
  c.d_ff = 5120;
  c.vocab_size = 50257;
  c.max_seq_len = 1024;
  c.tied_embeddings = true;
  c.ffn = FfnKind::gelu_mlp;
  c.norm = NormKind::layer;
  c.positions = PositionKind::learned;
  c.linear_bias = true;
  return c;
}

ModelConfig llama3_8b_like() {
  ModelConfig c;
  c.n_layers = 32;
  c.d_model = 4096;
  c.n_heads = 32;
  c.n_kv_heads = 8;
  c.d_head = 128;
  c.d_ff = 14336;
  c.vocab_size = 128256;
  c.max_seq_len = 8192;
  c.tied_embeddings = false;
  c.ffn = FfnKind::gated;
  c.norm = NormKind::rms;
  c.positions = PositionKind::rotary;
  return c;
}

std::vector<std::string> preset_names() {
  return {"toy", "gemma2b-like", "gpt2large-like", "llama3-8b-like"};
}

ModelConfig preset(const std::string& name) {
  if (name == "toy") return toy_config();
  if (name == "gemma2b-like") return gemma2b_like();
  if (name == "gpt2large-like") return gpt2large_like();
  if (name == "llama3-8b-like") return llama3_8b_like();
  throw ConfigError("unknown model preset '" + name + "'");
}

std::uint64_t count_base_params(const ModelConfig& c) {
  c.validate();
  const std::uint64_t d = c.d_model;
  const std::uint64_t qw = c.q_width();
  const std::uint64_t kvw = c.kv_width();
  const std::uint64_t norm = c.norm == NormKind::layer ? 2 * d : d;
  const std::uint64_t bias = c.linear_bias ? 1 : 0;

  std::uint64_t attn = d * qw + 2 * d * kvw + qw * d;
  attn += bias * (qw + 2 * kvw + d);
  std::uint64_t ffn = 0;
  if (c.ffn == FfnKind::gated) {
    ffn = 3 * d * c.d_ff + bias * (2 * c.d_ff + d);
  } else {
    ffn = 2 * d * c.d_ff + bias * (c.d_ff + d);
  }
  const std::uint64_t per_layer = attn + ffn + 2 * norm;

  std::uint64_t total = c.vocab_size * d;  // token embedding
  if (c.positions == PositionKind::learned) total += c.max_seq_len * d;
  total += c.n_layers * per_layer;
  total += norm;  // final norm
  if (!c.tied_embeddings) total += c.vocab_size * d;
  return total;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},     {"d_model", c.d_model},
                     {"n_heads", c.n_heads},       {"n_kv_heads", c.n_kv_heads},
                     {"d_head", c.d_head},         {"d_ff", c.d_ff},
                     {"vocab_size", c.vocab_size}, {"max_seq_len", c.max_seq_len},
                     {"tied_embeddings", c.tied_embeddings},
                     {"ffn", c.ffn},               {"norm", c.norm},
                     {"positions", c.positions},   {"linear_bias", c.linear_bias}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("n_layers").get_to(c.n_layers);
  j.at("d_model").get_to(c.d_model);
  j.at("n_heads").get_to(c.n_heads);
  j.at("n_kv_heads").get_to(c.n_kv_heads);
  j.at("d_head").get_to(c.d_head);
  j.at("d_ff").get_to(c.d_ff);
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("max_seq_len").get_to(c.max_seq_len);
  j.at("tied_embeddings").get_to(c.tied_embeddings);
  j.at("ffn").get_to(c.ffn);
  j.at("norm").get_to(c.norm);
  j.at("positions").get_to(c.positions);
  j.at("linear_bias").get_to(c.linear_bias);
}

}  // namespace psyadapter
