// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "psyadapter/autodiff.hpp"
#include "psyadapter/model_config.hpp"

namespace psyadapter {

/// Projection names a LoRA target may refer to.
const std::vector<std::string>& lora_target_universe();

struct LoraConfig {
  std::uint64_t r = 8;
  double alpha = 32.0;
  double dropout = 0.1;
  std::set<std::string> target_modules = {"q_proj", "o_proj",    "k_proj", "v_proj",
                                          "gate_proj", "up_proj", "down_proj"};

  double scaling() const { return alpha / static_cast<double>(r); }
  void validate() const;
};

/// Shape (out, in) of a named projection in one layer, or nullopt when the
/// layout has no such projection (gate_proj in a plain GELU MLP).
std::optional<std::pair<std::uint64_t, std::uint64_t>> projection_shape(const ModelConfig& model,
                                                                        const std::string& name);

/// Sum over layers and present targets of r * (in + out). Unknown names throw.
std::uint64_t lora_param_count(const ModelConfig& model, const LoraConfig& lora);

/// W0 + (alpha / r) * B * A. Only A and B carry gradients.
ad::Tensor effective_weight(ad::Tape& tape, const ad::Tensor& w0, const ad::Tensor& a,
                            const ad::Tensor& b, double alpha, std::uint64_t r);

struct LoraPair {
  ad::Tensor a;  // r × in ("down")
  ad::Tensor b;  // out × r ("up"), zero at init
};

struct LoraWeights {
  LoraConfig config;
  /// layers[l][target] for each present target projection.
  std::vector<std::map<std::string, LoraPair>> layers;

  const LoraPair* find(std::size_t layer, const std::string& target) const;
  std::vector<ad::Tensor> parameters() const;
  std::uint64_t parameter_count() const;
};

/// A ~ U(-1/sqrt(in), 1/sqrt(in)), B = 0.
LoraWeights init_lora(const ModelConfig& model, const LoraConfig& config, std::uint64_t seed);

void to_json(nlohmann::json& j, const LoraConfig& c);
void from_json(const nlohmann::json& j, LoraConfig& c);

}  // namespace psyadapter
