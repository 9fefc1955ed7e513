// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace psyadapter {

enum class FfnKind { gelu_mlp, gated };
enum class NormKind { layer, rms };
enum class PositionKind { learned, rotary };

/// Decoder-only transformer description.
///
/// Toy configurations (learned positions, LayerNorm, GELU MLP, no linear
/// biases) can be instantiated and run. The published-model presets use
/// other layout choices and exist for parameter accounting only.
struct ModelConfig {
  std::uint64_t n_layers = 2;
  std::uint64_t d_model = 64;
  std::uint64_t n_heads = 4;
  std::uint64_t n_kv_heads = 4;
  std::uint64_t d_head = 16;
  std::uint64_t d_ff = 256;
  std::uint64_t vocab_size = 200;
  std::uint64_t max_seq_len = 32;
  bool tied_embeddings = true;

  FfnKind ffn = FfnKind::gelu_mlp;
  NormKind norm = NormKind::layer;
  PositionKind positions = PositionKind::learned;
  bool linear_bias = false;

  std::uint64_t kv_width() const { return n_kv_heads * d_head; }
  std::uint64_t q_width() const { return n_heads * d_head; }

  /// Throws ConfigError naming the first violated constraint.
  void validate() const;
  /// validate() plus the layout restrictions of the executable model.
  void validate_runnable() const;

  bool operator==(const ModelConfig&) const = default;
};

/// 2 layers, d_model 64, 4 heads, 4 kv heads, d_head 16, d_ff 256, vocab 200.
ModelConfig toy_config();

ModelConfig gemma2b_like();
ModelConfig gpt2large_like();
ModelConfig llama3_8b_like();

/// Looks up "gemma2b-like", "gpt2large-like", "llama3-8b-like" or "toy".
ModelConfig preset(const std::string& name);
std::vector<std::string> preset_names();

/// Parameter count of the base model in closed form.
std::uint64_t count_base_params(const ModelConfig& config);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace psyadapter
