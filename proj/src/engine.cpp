// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "psyadapter/errors.hpp"

namespace psyadapter {
namespace {

using ad::Tape;
using ad::Tensor;

void check_sequence(std::span<const int> tokens) {
  if (tokens.size() < 2 || tokens.front() != Tokenizer::kBos || tokens.back() != Tokenizer::kEos) {
    throw InputError("sequence must start with [BOS] and end with [EOS]");
  }
}

// Visits the training set in shuffled epochs.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) { reshuffle(); }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    out.reserve(batch);
    while (out.size() < batch) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

double evaluate(const ModelWeights& model, const AdapterWeights* adapter, const LoraWeights* lora,
                std::span<const Example> set, std::size_t limit) {
  const std::size_t n = limit == 0 ? set.size() : std::min(limit, set.size());
  if (n == 0) throw InputError("evaluation set is empty");
  double total = 0.0;
  std::size_t count = 0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t i = 0; i < n; i += kChunk) {
    std::vector<const Example*> chunk;
    std::size_t predictions = 0;
    for (std::size_t j = i; j < std::min(n, i + kChunk); ++j) {
      chunk.push_back(&set[j]);
      predictions += set[j].tokens.size() - 1;
    }
    Tape tape;
    tape.set_recording(false);
    total += batch_nll(tape, model, adapter, lora, chunk).item() * static_cast<double>(predictions);
    count += predictions;
  }
  return total / static_cast<double>(count);
}

using StepFn = std::function<double(std::span<const Example* const>)>;

TrainReport run_loop(const ModelWeights& model, const AdapterWeights* adapter,
                     const LoraWeights* lora, std::span<const Example> train_set,
                     std::span<const Example> validation_set, const TrainConfig& config,
                     const StepFn& step, const ProgressFn& progress) {
  config.validate();
  if (train_set.empty()) throw InputError("training set is empty");
  auto val = [&] {
    return evaluate(model, adapter, lora, validation_set.empty() ? train_set : validation_set,
                    config.eval_limit);
  };
  TrainReport report;
  report.steps = config.steps;
  report.initial_validation_loss = val();
  report.curve.push_back({0, report.initial_validation_loss, report.initial_validation_loss});
  if (progress) progress(report.curve.back());

  BatchSampler sampler(train_set.size(), config.seed);
  for (std::size_t s = 1; s <= config.steps; ++s) {
    std::vector<const Example*> batch;
    for (std::size_t i : sampler.next(config.batch_size)) batch.push_back(&train_set[i]);
    LossPoint p{s, step(batch), std::nullopt};
    if (s == config.steps || (config.eval_every > 0 && s % config.eval_every == 0)) {
      p.validation_loss = val();
    }
    report.curve.push_back(p);
    if (progress && (p.validation_loss || s % 50 == 0)) progress(p);
  }
  report.final_validation_loss = *report.curve.back().validation_loss;
  return report;
}

}  // namespace

std::vector<Example> make_examples(std::span<const CorpusRecord> records, const Tokenizer& tok,
                                   std::size_t max_len, Split split) {
  if (max_len < 2) throw ConfigError("max sequence length must allow [BOS] and [EOS]");
  std::vector<Example> out;
  for (const auto& r : records) {
    if (r.split != split || !r.scores) continue;
    Example e;
    e.tokens = tok.encode(r.text, true, true);
    if (e.tokens.size() > max_len) {
      e.tokens.resize(max_len);
      e.tokens.back() = Tokenizer::kEos;
    }
    e.psi = *r.scores;
    out.push_back(std::move(e));
  }
  return out;
}

Tensor batch_nll(Tape& tape, const ModelWeights& model, const AdapterWeights* adapter,
                 const LoraWeights* lora, std::span<const Example* const> batch,
                 const ForwardOptions& options) {
  if (batch.empty()) throw InputError("batch is empty");
  std::vector<KVPrefix> prefixes;
  prefixes.reserve(batch.size());
  std::vector<SequenceInput> inputs;
  std::vector<int> targets;
  for (const Example* e : batch) {
    check_sequence(e->tokens);
    const KVPrefix* p = nullptr;
    if (adapter != nullptr) {
      prefixes.push_back(make_prefix(tape, TraitVector{e->psi}, *adapter, model.config));
      p = &prefixes.back();
    }
    const std::span<const int> all(e->tokens);
    inputs.push_back({all.first(all.size() - 1), p});
    targets.insert(targets.end(), e->tokens.begin() + 1, e->tokens.end());
  }
  ForwardOptions opt = options;
  opt.lora = lora;
  return tape.cross_entropy_mean(forward_batch(tape, model, inputs, opt), targets);
}

Tensor sequence_nll(Tape& tape, const ModelWeights& model, const AdapterWeights& adapter,
                    const LoraWeights* lora, const Tensor& psi, std::span<const int> tokens,
                    const ForwardOptions& options) {
  check_sequence(tokens);
  KVPrefix prefix = make_prefix(tape, psi, adapter, model.config);
  ForwardOptions opt = options;
  opt.lora = lora;
  Tensor logits = forward(tape, model, tokens.first(tokens.size() - 1), &prefix,
                          options.include_prefix_in_attention, opt);
  return tape.cross_entropy_mean(logits, tokens.subspan(1));
}

double sequence_nll(const ModelWeights& model, const AdapterWeights& adapter,
                    const LoraWeights* lora, const TraitVector& psi, std::span<const int> tokens,
                    bool include_prefix) {
  Tape tape;
  tape.set_recording(false);
  ForwardOptions opt;
  opt.include_prefix_in_attention = include_prefix;
  return sequence_nll(tape, model, adapter, lora, Tensor::from(1, psi.values.size(), psi.values),
                      tokens, opt)
      .item();
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw ContractError("Adam: parameter does not track gradients");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].mutable_values();
    const auto g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      w[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
    params_[i].zero_grad();
  }
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be > 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (max_seq_len < 2) throw ConfigError("max sequence length must be >= 2");
}

nlohmann::json to_json(const TrainReport& r) {
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& p : r.curve) {
    nlohmann::json j = {{"step", p.step}, {"train_loss", p.train_loss}};
    if (p.validation_loss) j["validation_loss"] = *p.validation_loss;
    curve.push_back(std::move(j));
  }
  return {{"steps", r.steps},
          {"initial_validation_loss", r.initial_validation_loss},
          {"final_validation_loss", r.final_validation_loss},
          {"adapter_params", r.adapter_params},
          {"lora_params", r.lora_params},
          {"trainable_params", r.trainable_params},
          {"curve", std::move(curve)}};
}

std::uint64_t trainable_census(const ModelConfig& model, const AdapterConfig& adapter,
                               const LoraConfig* lora) {
  return adapter_param_count(model, adapter) + (lora ? lora_param_count(model, *lora) : 0);
}

TrainReport train(const ModelWeights& model, AdapterWeights& adapter, LoraWeights* lora,
                  std::span<const Example> train_set, std::span<const Example> validation_set,
                  const TrainConfig& config, const ProgressFn& progress) {
  if (!model.frozen) throw StateError("train: base model must be frozen");
  for (const auto& [name, t] : model.named_parameters()) {
    if (t.requires_grad()) throw StateError("train: base tensor '" + name + "' tracks gradients");
  }
  for (const auto& e : train_set) {
    if (e.psi.size() != adapter.config.latent_size) {
      throw InputError("train: example has " + std::to_string(e.psi.size()) +
                       " scores, adapter expects " + std::to_string(adapter.config.latent_size));
    }
  }
  std::vector<Tensor> params = adapter.parameters();
  if (lora != nullptr) {
    auto lp = lora->parameters();
    params.insert(params.end(), lp.begin(), lp.end());
  }
  std::uint64_t census = 0;
  for (const auto& p : params) census += p.numel();

  Adam opt(params, config.lr);
  std::mt19937_64 dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  auto step = [&](std::span<const Example* const> batch) {
    Tape tape;
    ForwardOptions fo;
    fo.training = true;
    fo.dropout_rng = &dropout_rng;
    Tensor loss = batch_nll(tape, model, &adapter, lora, batch, fo);
    tape.backward(loss);
    opt.step();
    return loss.item();
  };
  TrainReport r = run_loop(model, &adapter, lora, train_set, validation_set, config, step, progress);
  r.adapter_params = adapter.parameter_count();
  r.lora_params = lora ? lora->parameter_count() : 0;
  r.trainable_params = census;
  return r;
}

TrainReport pretrain_base(ModelWeights& model, std::span<const Example> train_set,
                          std::span<const Example> validation_set, const TrainConfig& config,
                          const ProgressFn& progress) {
  model.set_frozen(false);
  std::vector<Tensor> params;
  for (const auto& [name, t] : model.named_parameters()) params.push_back(t);
  Adam opt(params, config.lr);
  auto step = [&](std::span<const Example* const> batch) {
    Tape tape;
    Tensor loss = batch_nll(tape, model, nullptr, nullptr, batch);
    tape.backward(loss);
    opt.step();
    return loss.item();
  };
  TrainReport r;
  try {
    r = run_loop(model, nullptr, nullptr, train_set, validation_set, config, step, progress);
  } catch (...) {
    model.set_frozen(true);
    throw;
  }
  model.set_frozen(true);
  r.trainable_params = model.parameter_count();
  return r;
}

void SamplingConfig::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be >= 0");
  }
  if (top_k < 1) throw ConfigError("top_k must be >= 1");
  if (max_new_tokens < 1) throw InputError("max_new_tokens must be >= 1");
}

std::vector<int> generate_tokens(const Generator& gen, const TraitVector& psi,
                                 const std::string& prompt, const SamplingConfig& sampling) {
  sampling.validate();
  if (gen.model == nullptr || gen.tokenizer == nullptr) {
    throw ContractError("generate: generator needs a model and a tokenizer");
  }
  const Tokenizer& tok = *gen.tokenizer;
  const ModelWeights& model = *gen.model;
  if (tok.size() <= static_cast<std::size_t>(Tokenizer::kSpecials)) {
    throw InputError("generate: vocabulary has no words");
  }
  const std::size_t vocab = std::min<std::size_t>(tok.size(), model.config.vocab_size);

  Tape prefix_tape;
  prefix_tape.set_recording(false);
  std::optional<KVPrefix> prefix;
  if (gen.adapter != nullptr) prefix = make_prefix(prefix_tape, psi, *gen.adapter, model.config);

  std::vector<int> ids = tok.encode(prompt, true, false);
  if (ids.size() >= model.config.max_seq_len) {
    throw InputError("generate: prompt fills the whole context");
  }
  std::mt19937_64 rng(sampling.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ForwardOptions fo;
  fo.lora = gen.lora;

  std::vector<std::pair<double, int>> cand;
  for (std::size_t n = 0; n < sampling.max_new_tokens && ids.size() < model.config.max_seq_len; ++n) {
    Tape tape;
    tape.set_recording(false);
    Tensor logits = forward(tape, model, ids, prefix ? &*prefix : nullptr, true, fo);
    const std::size_t last = ids.size() - 1;
    cand.clear();
    for (std::size_t v = 0; v < vocab; ++v) {
      const int id = static_cast<int>(v);
      if (id == Tokenizer::kPad || id == Tokenizer::kBos || id == Tokenizer::kUnk) continue;
      cand.emplace_back(logits.at(last, v), id);
    }
    int next;
    if (sampling.temperature == 0.0) {
      next = std::max_element(cand.begin(), cand.end(), [](const auto& a, const auto& b) {
               return a.first < b.first || (a.first == b.first && a.second > b.second);
             })->second;
    } else {
      const std::size_t k = std::min(sampling.top_k, cand.size());
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(),
                        [](const auto& a, const auto& b) {
                          return a.first > b.first || (a.first == b.first && a.second < b.second);
                        });
      cand.resize(k);
      const double mx = cand.front().first;
      double z = 0.0;
      std::vector<double> p(k);
      for (std::size_t i = 0; i < k; ++i) {
        p[i] = std::exp((cand[i].first - mx) / sampling.temperature);
        z += p[i];
      }
      double u = unit(rng) * z;
      next = cand.back().second;
      for (std::size_t i = 0; i < k; ++i) {
        if (u < p[i]) {
          next = cand[i].second;
          break;
        }
        u -= p[i];
      }
    }
    ids.push_back(next);
    if (next == Tokenizer::kEos) break;
  }
  return ids;
}

std::string generate(const Generator& gen, const TraitVector& psi, const std::string& prompt,
                     const SamplingConfig& sampling) {
  const auto ids = generate_tokens(gen, psi, prompt, sampling);
  const std::size_t prompt_len = gen.tokenizer->encode(prompt, true, false).size();
  const std::string tail = gen.tokenizer->decode(std::span<const int>(ids).subspan(prompt_len));
  if (prompt.empty()) return tail;
  if (tail.empty()) return prompt;
  return prompt + " " + tail;
}

std::vector<std::string> generate_many(const Generator& gen, const TraitVector& psi,
                                       const std::string& prompt, const SamplingConfig& sampling,
                                       std::size_t n) {
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SamplingConfig s = sampling;
    s.seed = sampling.seed + i;
    out.push_back(generate(gen, psi, prompt, s));
  }
  return out;
}

}  // namespace psyadapter
