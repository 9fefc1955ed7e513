// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/lora.hpp"

#include <algorithm>
#include <cmath>

#include "psyadapter/errors.hpp"

namespace psyadapter {

const std::vector<std::string>& lora_target_universe() {
  static const std::vector<std::string> names = {"q_proj",    "k_proj",  "v_proj",   "o_proj",
                                                 "gate_proj", "up_proj", "down_proj"};
  return names;
}

void LoraConfig::validate() const {
  if (r < 1) throw ConfigError("lora: rank r must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("lora: dropout must be in [0, 1)");
  const auto& universe = lora_target_universe();
  for (const auto& t : target_modules) {
    if (std::find(universe.begin(), universe.end(), t) == universe.end()) {
      throw ConfigError("lora: unknown target module '" + t + "'");
    }
  }
}

std::optional<std::pair<std::uint64_t, std::uint64_t>> projection_shape(const ModelConfig& m,
                                                                        const std::string& name) {
  const std::uint64_t d = m.d_model;
  if (name == "q_proj") return std::pair{m.q_width(), d};
  if (name == "k_proj" || name == "v_proj") return std::pair{m.kv_width(), d};
  if (name == "o_proj") return std::pair{d, m.q_width()};
  if (name == "gate_proj") {
    if (m.ffn != FfnKind::gated) return std::nullopt;
    return std::pair{m.d_ff, d};
  }
  if (name == "up_proj") return std::pair{m.d_ff, d};
  if (name == "down_proj") return std::pair{d, m.d_ff};
  throw ConfigError("lora: unknown target module '" + name + "'");
}

std::uint64_t lora_param_count(const ModelConfig& model, const LoraConfig& lora) {
  model.validate();
  lora.validate();
  std::uint64_t per_layer = 0;
  for (const auto& t : lora.target_modules) {
    if (auto shape = projection_shape(model, t)) per_layer += lora.r * (shape->first + shape->second);
  }
  return per_layer * model.n_layers;
}

ad::Tensor effective_weight(ad::Tape& tape, const ad::Tensor& w0, const ad::Tensor& a,
                            const ad::Tensor& b, double alpha, std::uint64_t r) {
  if (r == 0) throw ConfigError("lora: rank r must be >= 1");
  if (a.rows() != r || b.cols() != r || b.rows() != w0.rows() || a.cols() != w0.cols()) {
    throw ShapeError("lora: W0 " + w0.shape_string() + ", A " + a.shape_string() + ", B " +
                     b.shape_string() + " are inconsistent for rank " + std::to_string(r));
  }
  return tape.add(w0, tape.scale(tape.matmul(b, a), alpha / static_cast<double>(r)));
}

const LoraPair* LoraWeights::find(std::size_t layer, const std::string& target) const {
  if (layer >= layers.size()) return nullptr;
  auto it = layers[layer].find(target);
  return it == layers[layer].end() ? nullptr : &it->second;
}

std::vector<ad::Tensor> LoraWeights::parameters() const {
  std::vector<ad::Tensor> out;
  for (const auto& layer : layers) {
    for (const auto& [name, pair] : layer) {
      out.push_back(pair.a);
      out.push_back(pair.b);
    }
  }
  return out;
}

std::uint64_t LoraWeights::parameter_count() const {
  std::uint64_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

LoraWeights init_lora(const ModelConfig& model, const LoraConfig& config, std::uint64_t seed) {
  model.validate();
  config.validate();
  LoraWeights w;
  w.config = config;
  std::mt19937_64 rng(seed);
  w.layers.resize(model.n_layers);
  for (std::uint64_t l = 0; l < model.n_layers; ++l) {
    // Fixed iteration order over the universe keeps initialization independent
    // of std::set ordering details.
    for (const auto& name : lora_target_universe()) {
      if (!config.target_modules.contains(name)) continue;
      auto shape = projection_shape(model, name);
      if (!shape) continue;
      const auto [out, in] = *shape;
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> u(-bound, bound);
      std::vector<double> av(config.r * in);
      for (double& v : av) v = u(rng);
      LoraPair p{ad::Tensor::from(config.r, in, std::move(av), true),
                 ad::Tensor::zeros(out, config.r, true)};
      w.layers[l].emplace(name, std::move(p));
    }
  }
  return w;
}

void to_json(nlohmann::json& j, const LoraConfig& c) {
  j = nlohmann::json{{"r", c.r},
                     {"alpha", c.alpha},
                     {"dropout", c.dropout},
                     {"target_modules", std::vector<std::string>(c.target_modules.begin(),
                                                                 c.target_modules.end())}};
}

void from_json(const nlohmann::json& j, LoraConfig& c) {
  j.at("r").get_to(c.r);
  j.at("alpha").get_to(c.alpha);
  j.at("dropout").get_to(c.dropout);
  auto t = j.at("target_modules").get<std::vector<std::string>>();
  c.target_modules = std::set<std::string>(t.begin(), t.end());
}

}  // namespace psyadapter
