// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "psyadapter/engine.hpp"
#include "psyadapter/errors.hpp"

namespace psyadapter {
namespace {

using ad::Tape;
using ad::Tensor;

TEST(Census, GemmaLikeDefaults) {
  AdapterConfig ac;
  LoraConfig lc;
  EXPECT_EQ(trainable_census(gemma2b_like(), ac, &lc), 9'861'120u);
  EXPECT_EQ(trainable_census(gemma2b_like(), ac, nullptr), 55'296u);
}

// A small annotated corpus on the 200-id synthetic vocabulary.
struct Toy {
  SynthSpec spec = default_synth_spec(2);
  Tokenizer tok;
  std::vector<Example> train, val;

  explicit Toy(std::size_t n = 400) {
    auto recs = generate_synthetic_corpus(spec, n, 21);
    std::vector<std::string> texts;
    for (auto& r : recs) {
      texts.push_back(r.text);
      r.scores = r.latent;
    }
    tok = Tokenizer::build(texts, 1);
    train = make_examples(recs, tok, 32, Split::train);
    val = make_examples(recs, tok, 32, Split::validation);
  }
};

AdapterWeights toy_adapter(std::uint64_t seed) {
  AdapterConfig ac;
  ac.latent_size = 2;
  return init_adapter(toy_config(), ac, TraitSpec::normalized({"extraversion", "neuroticism"}), seed);
}

TEST(MakeExamples, FramesAndTruncates) {
  Toy toy(50);
  ASSERT_FALSE(toy.train.empty());
  for (const auto& e : toy.train) {
    EXPECT_EQ(e.tokens.front(), Tokenizer::kBos);
    EXPECT_EQ(e.tokens.back(), Tokenizer::kEos);
    EXPECT_EQ(e.psi.size(), 2u);
  }
  std::vector<CorpusRecord> r(1);
  r[0].text = "a b c d e f g h";
  r[0].scores = std::vector<double>{0, 0};
  auto t = Tokenizer::build(std::vector<std::string>{r[0].text}, 1);
  auto cut = make_examples(r, t, 5, Split::train);
  ASSERT_EQ(cut.size(), 1u);
  EXPECT_EQ(cut[0].tokens.size(), 5u);
  EXPECT_EQ(cut[0].tokens.back(), Tokenizer::kEos);
  r[0].scores.reset();
  EXPECT_TRUE(make_examples(r, t, 5, Split::train).empty());
}

TEST(SequenceNll, UntrainedIsNearUniform) {
  auto model = init_model(toy_config(), 1);
  auto adapter = toy_adapter(2);
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pick(4, 199);
  double total = 0.0;
  for (int s = 0; s < 20; ++s) {
    std::vector<int> toks{Tokenizer::kBos};
    for (int i = 0; i < 20; ++i) toks.push_back(pick(rng));
    toks.push_back(Tokenizer::kEos);
    total += sequence_nll(model, adapter, nullptr, TraitVector{{0.5, -1.0}}, toks);
  }
  const double mean = total / 20.0;
  EXPECT_NEAR(mean, std::log(200.0), 0.15 * std::log(200.0));
}

TEST(SequenceNll, DeterministicAndFramed) {
  auto model = init_model(toy_config(), 1);
  auto adapter = toy_adapter(2);
  std::vector<int> toks{2, 10, 20, 30, 3};
  const double a = sequence_nll(model, adapter, nullptr, TraitVector{{1.0, 2.0}}, toks);
  const double b = sequence_nll(model, adapter, nullptr, TraitVector{{1.0, 2.0}}, toks);
  EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
  EXPECT_THROW(sequence_nll(model, adapter, nullptr, TraitVector{{1, 2}}, std::vector<int>{10, 20, 3}),
               InputError);
  EXPECT_THROW(sequence_nll(model, adapter, nullptr, TraitVector{{1, 2}}, std::vector<int>{2, 10, 20}),
               InputError);
}

TEST(SequenceNll, GradientOverAdapterAndLora) {
  auto model = init_model(toy_config(), 4);
  auto adapter = toy_adapter(5);
  LoraConfig lc;
  auto lora = init_lora(toy_config(), lc, 6);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01(0.0, 0.05);
  for (auto& layer : lora.layers)
    for (auto& [name, pair] : layer)
      for (auto& v : pair.b.mutable_values()) v = n01(rng);
  std::vector<Tensor> params = adapter.parameters();
  for (const auto& t : lora.parameters()) params.push_back(t);
  const auto psi = Tensor::from(1, 2, {1.5, -0.7});
  const std::vector<int> toks{2, 40, 77, 13, 150, 3};
  auto res = ad::finite_diff_check(
      [&](Tape& tape) { return sequence_nll(tape, model, adapter, &lora, psi, toks); }, params, 2e-3,
      true);
  EXPECT_EQ(res.checked, adapter.parameter_count() + lora.parameter_count());
  EXPECT_LT(res.max_rel_error, 1e-5) << "param " << res.worst_param << "[" << res.worst_index
                                     << "] analytic " << res.worst_analytic << " numeric "
                                     << res.worst_numeric;
}

TEST(Train, FreezeContractAndCensus) {
  Toy toy;
  auto model = init_model(toy_config(), 8);
  std::vector<std::vector<double>> before;
  for (const auto& [name, t] : model.named_parameters()) before.emplace_back(t.values().begin(), t.values().end());
  auto adapter = toy_adapter(9);
  auto adapter0 = adapter.key[0].values()[0];
  LoraConfig lc;
  auto lora = init_lora(toy_config(), lc, 10);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 8;
  tc.steps = 50;
  tc.seed = 11;
  tc.eval_limit = 32;
  auto report = train(model, adapter, &lora, toy.train, toy.val, tc);

  std::size_t i = 0;
  for (const auto& [name, t] : model.named_parameters()) {
    const auto& b = before[i++];
    ASSERT_EQ(std::memcmp(b.data(), t.values().data(), b.size() * sizeof(double)), 0) << name;
  }
  EXPECT_NE(adapter.key[0].values()[0], adapter0);
  EXPECT_EQ(report.trainable_params,
            adapter_param_count(toy_config(), adapter.config) + lora_param_count(toy_config(), lc));
  EXPECT_EQ(report.trainable_params, 19'200u);
  EXPECT_EQ(report.steps, 50u);
  EXPECT_EQ(report.curve.size(), 51u);
  EXPECT_LT(report.final_validation_loss, report.initial_validation_loss);
}

TEST(Train, Preconditions) {
  Toy toy(60);
  auto model = init_model(toy_config(), 8);
  auto adapter = toy_adapter(9);
  TrainConfig tc;
  tc.steps = 1;
  EXPECT_THROW(train(model, adapter, nullptr, {}, toy.val, tc), InputError);
  model.set_frozen(false);
  EXPECT_THROW(train(model, adapter, nullptr, toy.train, toy.val, tc), StateError);
  model.set_frozen(true);
  tc.lr = 0.0;
  EXPECT_THROW(train(model, adapter, nullptr, toy.train, toy.val, tc), ConfigError);
}

TEST(Train, SameSeedSameWeights) {
  Toy toy(200);
  auto run = [&] {
    auto model = init_model(toy_config(), 8);
    auto adapter = toy_adapter(9);
    LoraConfig lc;
    auto lora = init_lora(toy_config(), lc, 10);
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.batch_size = 4;
    tc.steps = 5;
    tc.eval_limit = 8;
    train(model, adapter, &lora, toy.train, toy.val, tc);
    std::vector<double> out;
    for (const auto& t : adapter.parameters()) out.insert(out.end(), t.values().begin(), t.values().end());
    for (const auto& t : lora.parameters()) out.insert(out.end(), t.values().begin(), t.values().end());
    return out;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
}

TEST(Pretrain, UpdatesBaseAndRefreezes) {
  Toy toy(200);
  auto model = init_model(toy_config(), 8);
  const double w0 = model.tok_emb.values()[500];
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 8;
  tc.steps = 20;
  tc.eval_limit = 16;
  auto r = pretrain_base(model, toy.train, toy.val, tc);
  EXPECT_NE(model.tok_emb.values()[500], w0);
  EXPECT_TRUE(model.frozen);
  EXPECT_LT(r.final_validation_loss, r.initial_validation_loss);
}

class Generation : public ::testing::Test {
 protected:
  Toy toy{100};
  ModelWeights model = init_model(toy_config(), 12);
  AdapterWeights adapter = toy_adapter(13);
  Generator gen() const { return {&model, &adapter, nullptr, &toy.tok}; }
};

TEST_F(Generation, GreedyIsDeterministic) {
  SamplingConfig s;
  s.temperature = 0.0;
  s.max_new_tokens = 10;
  const auto a = generate(gen(), TraitVector{{3, 0}}, "", s);
  s.seed = 999;  // irrelevant under greedy decoding
  EXPECT_EQ(generate(gen(), TraitVector{{3, 0}}, "", s), a);
}

TEST_F(Generation, SampledIsSeeded) {
  SamplingConfig s;
  s.seed = 4;
  const auto a = generate_many(gen(), TraitVector{{0, 0}}, "", s, 3);
  EXPECT_EQ(generate_many(gen(), TraitVector{{0, 0}}, "", s, 3), a);
  s.seed = 5;
  EXPECT_EQ(generate(gen(), TraitVector{{0, 0}}, "", s), a[1]);
}

TEST_F(Generation, PromptIsKeptVerbatim) {
  SamplingConfig s;
  s.seed = 1;
  for (const std::string prompt : {"i like to", "I Like To"}) {
    const auto out = generate(gen(), TraitVector{{1, 1}}, prompt, s);
    EXPECT_EQ(out.rfind(prompt, 0), 0u) << out;
  }
}

TEST_F(Generation, NeverEmitsPadAndStopsOnce) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    SamplingConfig s;
    s.seed = seed;
    s.temperature = 1.5;
    s.top_k = 200;
    const auto ids = generate_tokens(gen(), TraitVector{{-2, 2}}, "i like", s);
    ASSERT_LE(ids.size(), toy_config().max_seq_len);
    EXPECT_EQ(ids.front(), Tokenizer::kBos);
    for (std::size_t i = 1; i < ids.size(); ++i) {
      EXPECT_NE(ids[i], Tokenizer::kPad);
      EXPECT_NE(ids[i], Tokenizer::kBos);
      if (ids[i] == Tokenizer::kEos) EXPECT_EQ(i, ids.size() - 1);
    }
  }
}

TEST_F(Generation, InputErrors) {
  SamplingConfig s;
  s.max_new_tokens = 0;
  EXPECT_THROW(generate(gen(), TraitVector{{0, 0}}, "", s), InputError);
  Tokenizer empty;
  Generator g{&model, &adapter, nullptr, &empty};
  EXPECT_THROW(generate(g, TraitVector{{0, 0}}, "", SamplingConfig{}), InputError);
  SamplingConfig bad;
  bad.top_k = 0;
  EXPECT_THROW(generate(gen(), TraitVector{{0, 0}}, "", bad), ConfigError);
}

}  // namespace
}  // namespace psyadapter
