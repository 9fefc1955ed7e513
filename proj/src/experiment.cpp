// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/experiment.hpp"

#include "psyadapter/errors.hpp"

namespace psyadapter {
namespace {

nlohmann::json train_json(const TrainConfig& t) {
  return {{"lr", t.lr},           {"batch_size", t.batch_size},   {"steps", t.steps},
          {"seed", t.seed},       {"max_seq_len", t.max_seq_len}, {"eval_every", t.eval_every},
          {"eval_limit", t.eval_limit}};
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dimensions < 1) throw ConfigError("experiment: need at least one dimension");
  if (general_messages < 1 || trait_messages < 1) throw ConfigError("experiment: empty corpus");
  pretrain.validate();
  train.validate();
  lora.validate();
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json lora;
  to_json(lora, c.lora);
  return {{"dimensions", c.dimensions},
          {"general_messages", c.general_messages},
          {"trait_messages", c.trait_messages},
          {"general_seed", c.general_seed},
          {"corpus_seed", c.corpus_seed},
          {"model_seed", c.model_seed},
          {"adapter_seed", c.adapter_seed},
          {"lora_seed", c.lora_seed},
          {"ridge_lambda", c.ridge_lambda},
          {"pretrain", train_json(c.pretrain)},
          {"train", train_json(c.train)},
          {"lora", lora}};
}

FittedScoring fit_scoring(std::span<const CorpusRecord> records,
                          const std::vector<std::string>& traits, double lambda) {
  std::vector<CorpusRecord> train;
  for (const auto& r : records)
    if (r.split == Split::train) train.push_back(r);
  if (train.empty()) throw InputError("score fit: no training records");

  std::vector<std::string> texts;
  std::vector<std::string> unit_texts;
  std::vector<std::vector<double>> psi;
  const bool synthetic = train.front().author && train.front().latent;
  if (synthetic) {
    for (auto& p : participants(train)) {
      unit_texts.push_back(std::move(p.text));
      psi.push_back(std::move(p.latent));
    }
  } else {
    for (const auto& r : train) {
      if (!r.scores) throw InputError("score fit: record without scores or latent");
      unit_texts.push_back(r.text);
      psi.push_back(*r.scores);
    }
  }
  for (const auto& r : train) texts.push_back(r.text);

  FittedScoring out;
  out.extractor = FeatureExtractor(build_scoring_vocabulary(texts, 1));
  std::vector<std::vector<double>> X;
  X.reserve(unit_texts.size());
  for (const auto& t : unit_texts) X.push_back(out.extractor.features(t));
  out.model = fit_scoring_model(X, psi, lambda, traits);
  calibrate(out.model, out.extractor, texts);
  return out;
}

Experiment run_experiment(const ExperimentConfig& config, const StageProgress& progress) {
  config.validate();
  Experiment ex;
  ex.spec = default_synth_spec(config.dimensions);
  auto general = generate_synthetic_corpus(ex.spec, config.general_messages, config.general_seed);
  auto raw = generate_synthetic_corpus(ex.spec, config.trait_messages, config.corpus_seed);

  std::vector<std::string> general_texts;
  for (const auto& r : general) general_texts.push_back(r.text);
  ex.tokenizer = Tokenizer::build(general_texts, 2);

  auto fitted = fit_scoring(raw, ex.spec.dimensions, config.ridge_lambda);
  ex.scoring = std::move(fitted.model);
  ex.extractor = std::move(fitted.extractor);
  auto annotated = annotate_corpus(raw, ex.scoring, ex.extractor);
  ex.corpus = std::move(annotated.records);
  ex.dropped = annotated.dropped;

  ModelConfig mc = toy_config();
  if (ex.tokenizer.size() > mc.vocab_size) {
    throw ConfigError("experiment: vocabulary of " + std::to_string(ex.tokenizer.size()) +
                      " exceeds the toy model's " + std::to_string(mc.vocab_size));
  }
  ex.model = init_model(mc, config.model_seed);

  // The base never sees psi; its examples carry a zero vector only to satisfy make_examples.
  for (auto& r : general) r.scores = std::vector<double>(config.dimensions, 0.0);
  const auto len = config.pretrain.max_seq_len;
  auto g_train = make_examples(general, ex.tokenizer, len, Split::train);
  auto g_val = make_examples(general, ex.tokenizer, len, Split::validation);
  ex.pretrain_report = pretrain_base(ex.model, g_train, g_val, config.pretrain,
                                     [&](const LossPoint& p) {
                                       if (progress) progress("pretrain", p);
                                     });

  AdapterConfig ac;
  ac.latent_size = config.dimensions;
  ex.adapter = init_adapter(ex.model.config, ac, TraitSpec::normalized(ex.spec.dimensions),
                            config.adapter_seed);
  ex.lora = init_lora(ex.model.config, config.lora, config.lora_seed);
  auto t_train = make_examples(ex.corpus, ex.tokenizer, config.train.max_seq_len, Split::train);
  auto t_val = make_examples(ex.corpus, ex.tokenizer, config.train.max_seq_len, Split::validation);
  ex.train_report = train(ex.model, ex.adapter, &ex.lora, t_train, t_val, config.train,
                          [&](const LossPoint& p) {
                            if (progress) progress("train", p);
                          });
  return ex;
}

}  // namespace psyadapter
