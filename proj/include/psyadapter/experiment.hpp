// SPDX-License-Identifier: Apache-2.0
//
// Seeded end-to-end toy run: synthetic corpora, scoring model, annotated
// corpus, base pretraining, adapter + LoRA training.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psyadapter/engine.hpp"

namespace psyadapter {

struct ExperimentConfig {
  std::size_t dimensions = 2;
  /// Unlabeled text for the base model. It has the trait corpus's lexical
  /// statistics but a disjoint seed and no scores.
  std::size_t general_messages = 5000;
  std::size_t trait_messages = 6000;
  std::uint64_t general_seed = 1;
  std::uint64_t corpus_seed = 2;
  std::uint64_t model_seed = 3;
  std::uint64_t adapter_seed = 5;
  std::uint64_t lora_seed = 6;
  double ridge_lambda = 1e-3;
  TrainConfig pretrain{3e-3, 32, 1000, 4, 32, 0, 200};
  TrainConfig train{3e-3, 32, 2000, 7, 32, 0, 200};
  LoraConfig lora;

  void validate() const;
};
nlohmann::json to_json(const ExperimentConfig& c);

struct Experiment {
  SynthSpec spec;
  std::vector<CorpusRecord> corpus;  // annotated trait corpus
  std::size_t dropped = 0;
  Tokenizer tokenizer;
  ScoringModel scoring;
  FeatureExtractor extractor;
  ModelWeights model;
  AdapterWeights adapter;
  LoraWeights lora;
  TrainReport pretrain_report;
  TrainReport train_report;

  Generator generator() const { return {&model, &adapter, &lora, &tokenizer}; }
};

/// Called with a stage name ("pretrain" or "train") and each loss point.
using StageProgress = std::function<void(const std::string&, const LossPoint&)>;

Experiment run_experiment(const ExperimentConfig& config, const StageProgress& progress = {});

/// Participant-level ridge fit on latent scores, calibrated on the training
/// messages. Records without author/latent are treated as one participant each
/// with their scores.
struct FittedScoring {
  ScoringModel model;
  FeatureExtractor extractor;
};
FittedScoring fit_scoring(std::span<const CorpusRecord> records,
                          const std::vector<std::string>& traits, double lambda);

}  // namespace psyadapter
