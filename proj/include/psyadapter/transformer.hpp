// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only causal transformer with one optional injected key/value
// prefix position per layer.
//
// Layout: learned absolute positions (starting at 0 for the first real token),
// pre-norm residual blocks, multi-/grouped-query attention, GELU MLP, final
// LayerNorm, tied or separate output head. The prefix slot carries no
// positional encoding, produces no logit and is visible to every position.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "psyadapter/autodiff.hpp"
#include "psyadapter/lora.hpp"
#include "psyadapter/model_config.hpp"

namespace psyadapter {

struct LayerWeights {
  ad::Tensor ln1_gain, ln1_bias;
  ad::Tensor q_proj, k_proj, v_proj, o_proj;  // out × in
  ad::Tensor ln2_gain, ln2_bias;
  ad::Tensor up_proj, down_proj;  // out × in
};

struct ModelWeights {
  ModelConfig config;
  ad::Tensor tok_emb;  // vocab × d_model
  ad::Tensor pos_emb;  // max_seq_len × d_model
  std::vector<LayerWeights> layers;
  ad::Tensor lnf_gain, lnf_bias;
  ad::Tensor head;  // vocab × d_model; undefined when tied
  bool frozen = true;

  /// Stable names ("layers.0.attn.q_proj", ...) in serialization order.
  std::vector<std::pair<std::string, ad::Tensor>> named_parameters() const;
  std::uint64_t parameter_count() const;
  /// Toggles gradient tracking on every base tensor and updates `frozen`.
  void set_frozen(bool on);
};

/// One prefix key/value row per covered layer, each n_kv_heads * d_head wide,
/// head-major (head g occupies columns [g*d_head, (g+1)*d_head)).
struct KVPrefix {
  struct Slot {
    ad::Tensor key;    // 1 × kv_width
    ad::Tensor value;  // 1 × kv_width
  };
  std::vector<std::optional<Slot>> layers;  // empty optional = layer not covered

  bool covers(std::size_t layer) const { return layer < layers.size() && layers[layer].has_value(); }
};

/// Std 0.02 normal for matrices and embeddings, gain 1 / bias 0 for norms.
/// Deterministic in (config, seed). Weights come back frozen.
ModelWeights init_model(const ModelConfig& config, std::uint64_t seed);

struct ForwardOptions {
  bool include_prefix_in_attention = true;
  const LoraWeights* lora = nullptr;
  /// Enables LoRA dropout; requires dropout_rng.
  bool training = false;
  std::mt19937_64* dropout_rng = nullptr;
};

struct SequenceInput {
  std::span<const int> tokens;
  const KVPrefix* prefix = nullptr;
};

/// Logits for a batch of sequences packed row-wise: rows of sequence b follow
/// those of b-1. Row t of a sequence parameterizes p(w_{t+1} | w_{<=t}, prefix).
ad::Tensor forward_batch(ad::Tape& tape, const ModelWeights& weights,
                         std::span<const SequenceInput> batch, const ForwardOptions& options = {});

/// Single-sequence forward, logits n × vocab_size.
ad::Tensor forward(ad::Tape& tape, const ModelWeights& weights, std::span<const int> tokens,
                   const KVPrefix* prefix, bool include_prefix_in_attention,
                   const ForwardOptions& options = {});

inline constexpr const char* kModelMagic = "PSYMODL1";

/// Weights narrowed to float32. `extra` lands in the metadata block under
/// "extra" (the engine stores the tokenizer vocabulary there).
void save_model(const std::filesystem::path& path, const ModelWeights& weights,
                const nlohmann::json& extra = nlohmann::json::object());

struct LoadedModel {
  ModelWeights weights;
  nlohmann::json extra;
};
LoadedModel load_model(const std::filesystem::path& path);

}  // namespace psyadapter
