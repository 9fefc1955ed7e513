// SPDX-License-Identifier: Apache-2.0
//
// Conditional language-model training and trait-conditioned sampling.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psyadapter/adapter.hpp"
#include "psyadapter/corpus.hpp"
#include "psyadapter/tokenizer.hpp"
#include "psyadapter/transformer.hpp"

namespace psyadapter {

/// One training sequence: [BOS] words [EOS] and its conditioning vector.
struct Example {
  std::vector<int> tokens;
  std::vector<double> psi;
};

/// Records of `split` that carry scores, encoded and cut to max_len tokens
/// (the final token is always [EOS]).
std::vector<Example> make_examples(std::span<const CorpusRecord> records, const Tokenizer& tok,
                                   std::size_t max_len, Split split);

/// Mean next-token NLL of one sequence with the prefix built from psi.
/// Differentiable w.r.t. psi (when tracked), the adapter and LoRA.
ad::Tensor sequence_nll(ad::Tape& tape, const ModelWeights& model, const AdapterWeights& adapter,
                        const LoraWeights* lora, const ad::Tensor& psi, std::span<const int> tokens,
                        const ForwardOptions& options = {});
double sequence_nll(const ModelWeights& model, const AdapterWeights& adapter,
                    const LoraWeights* lora, const TraitVector& psi, std::span<const int> tokens,
                    bool include_prefix = true);

/// Token-weighted mean NLL over a batch, every sequence with its own prefix.
/// A null adapter trains or scores the bare model.
ad::Tensor batch_nll(ad::Tape& tape, const ModelWeights& model, const AdapterWeights* adapter,
                     const LoraWeights* lora, std::span<const Example* const> batch,
                     const ForwardOptions& options = {});

class Adam {
 public:
  Adam(std::vector<ad::Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  /// Applies one update from the accumulated gradients, then clears them.
  void step();
  std::size_t steps() const { return t_; }

 private:
  std::vector<ad::Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  double lr = 5e-5;
  std::size_t batch_size = 64;
  std::size_t steps = 1000;
  std::uint64_t seed = 0;
  std::size_t max_seq_len = 32;
  /// Validation loss cadence in steps; 0 evaluates only before and after.
  std::size_t eval_every = 0;
  /// Cap on validation sequences per evaluation (0 = all).
  std::size_t eval_limit = 0;

  void validate() const;
};

struct LossPoint {
  std::size_t step = 0;
  double train_loss = 0.0;
  std::optional<double> validation_loss;
};

struct TrainReport {
  std::vector<LossPoint> curve;
  double initial_validation_loss = 0.0;
  double final_validation_loss = 0.0;
  std::uint64_t adapter_params = 0;
  std::uint64_t lora_params = 0;
  std::uint64_t trainable_params = 0;
  std::size_t steps = 0;
};
nlohmann::json to_json(const TrainReport& r);

using ProgressFn = std::function<void(const LossPoint&)>;

/// Updates only adapter and LoRA tensors; the model must be frozen.
TrainReport train(const ModelWeights& model, AdapterWeights& adapter, LoraWeights* lora,
                  std::span<const Example> train_set, std::span<const Example> validation_set,
                  const TrainConfig& config, const ProgressFn& progress = {});

/// Unconditioned full-parameter language-model training of the base model,
/// which stands in for a pretrained checkpoint. The model is frozen again on return.
TrainReport pretrain_base(ModelWeights& model, std::span<const Example> train_set,
                          std::span<const Example> validation_set, const TrainConfig& config,
                          const ProgressFn& progress = {});

/// Trainable scalars for the adapter + LoRA on a model description.
std::uint64_t trainable_census(const ModelConfig& model, const AdapterConfig& adapter,
                               const LoraConfig* lora);

struct SamplingConfig {
  double temperature = 1.0;
  std::size_t top_k = 50;
  std::size_t max_new_tokens = 30;
  std::uint64_t seed = 0;

  void validate() const;
};

struct Generator {
  const ModelWeights* model = nullptr;
  const AdapterWeights* adapter = nullptr;  // null: unconditioned
  const LoraWeights* lora = nullptr;
  const Tokenizer* tokenizer = nullptr;
};

/// Token ids: [BOS], the prompt, sampled tokens and a final [EOS] when one was drawn.
std::vector<int> generate_tokens(const Generator& gen, const TraitVector& psi,
                                 const std::string& prompt, const SamplingConfig& sampling);

/// [BOS] + prompt, then sampled tokens until [EOS], max_new_tokens or the
/// context limit. The returned text starts with `prompt` verbatim.
std::string generate(const Generator& gen, const TraitVector& psi, const std::string& prompt,
                     const SamplingConfig& sampling);

/// n samples; sample i uses seed + i.
std::vector<std::string> generate_many(const Generator& gen, const TraitVector& psi,
                                       const std::string& prompt, const SamplingConfig& sampling,
                                       std::size_t n);

}  // namespace psyadapter
