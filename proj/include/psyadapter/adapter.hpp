// SPDX-License-Identifier: Apache-2.0
//
// Trait adapter: for each covered layer a key matrix and a value matrix of
// shape (d_psi [+1 bias row]) × (n_kv_heads * d_head) project the trait
// vector straight into that layer's prefix key/value slot.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "psyadapter/autodiff.hpp"
#include "psyadapter/lora.hpp"
#include "psyadapter/traits.hpp"
#include "psyadapter/transformer.hpp"

namespace psyadapter {

enum class LayerCoverage { all, all_but_last };

LayerCoverage parse_coverage(const std::string& s);
const char* to_string(LayerCoverage c);

struct AdapterConfig {
  std::uint64_t latent_size = 5;
  bool use_bias = true;
  LayerCoverage coverage = LayerCoverage::all;

  std::uint64_t input_width() const { return latent_size + (use_bias ? 1 : 0); }
  std::uint64_t covered_layers(const ModelConfig& model) const;
  void validate() const;
};

/// 2 * covered_layers * (d_psi + bias) * n_kv_heads * d_head.
std::uint64_t adapter_param_count(const ModelConfig& model, const AdapterConfig& adapter);

/// (adapter + LoRA) / base. A null lora counts the adapter alone.
double trainable_fraction(const ModelConfig& model, const AdapterConfig& adapter,
                          const LoraConfig* lora);

struct AdapterWeights {
  AdapterConfig config;
  ModelConfig model;  // dimensions the matrices were built for
  TraitSpec traits;
  std::vector<ad::Tensor> key;    // one per covered layer, layer order
  std::vector<ad::Tensor> value;

  std::vector<ad::Tensor> parameters() const;
  std::uint64_t parameter_count() const;
  void validate() const;
};

/// Key/value matrices ~ N(0, 0.02^2) with the bias row zeroed.
AdapterWeights init_adapter(const ModelConfig& model, const AdapterConfig& config,
                            const TraitSpec& traits, std::uint64_t seed);

/// Prefix slots p~ B_l for the trait row vector `psi` (1 × d_psi). psi may be
/// a tracked tensor; gradients reach psi and the matrices.
KVPrefix make_prefix(ad::Tape& tape, const ad::Tensor& psi, const AdapterWeights& adapter,
                     const ModelConfig& model);
KVPrefix make_prefix(ad::Tape& tape, const TraitVector& psi, const AdapterWeights& adapter,
                     const ModelConfig& model);

inline constexpr const char* kAdapterMagic = "PSYADPT1";

/// Writes the adapter and, when given, LoRA weights as an optional section.
void save_adapter(const std::filesystem::path& path, const AdapterWeights& adapter,
                  const LoraWeights* lora = nullptr);

struct LoadedAdapter {
  AdapterWeights adapter;
  std::optional<LoraWeights> lora;
};
LoadedAdapter load_adapter(const std::filesystem::path& path);

}  // namespace psyadapter
