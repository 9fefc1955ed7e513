// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "psyadapter/adapter.hpp"
#include "psyadapter/container.hpp"
#include "psyadapter/errors.hpp"

namespace psyadapter {
namespace {

using ad::Tape;
using ad::Tensor;

AdapterConfig cfg(bool bias, LayerCoverage cov, std::uint64_t d = 5) {
  AdapterConfig c;
  c.latent_size = d;
  c.use_bias = bias;
  c.coverage = cov;
  return c;
}

TEST(AdapterCount, PublishedTotals) {
  const auto all = cfg(true, LayerCoverage::all);
  EXPECT_EQ(adapter_param_count(gemma2b_like(), all), 55296u);
  EXPECT_EQ(adapter_param_count(gpt2large_like(), all), 552960u);
  EXPECT_EQ(adapter_param_count(llama3_8b_like(), all), 393216u);
}

TEST(AdapterCount, NoBiasAllButLast) {
  EXPECT_EQ(adapter_param_count(gemma2b_like(), cfg(false, LayerCoverage::all_but_last)),
            2u * 17 * 5 * 256);
  EXPECT_EQ(2u * 17 * 5 * 256, 43520u);
}

TEST(AdapterCount, MatchesInstantiatedScalars) {
  for (bool bias : {false, true}) {
    for (auto cov : {LayerCoverage::all, LayerCoverage::all_but_last}) {
      auto c = cfg(bias, cov);
      auto a = init_adapter(toy_config(), c, TraitSpec::normalized({"a", "b", "c", "d", "e"}), 1);
      EXPECT_EQ(a.parameter_count(), adapter_param_count(toy_config(), c));
    }
  }
}

TEST(LoraCount, GemmaAllTargets) {
  LoraConfig lc;
  // per layer: r * (in + out) for q(2048->2048) k,v(2048->256) o(2048->2048)
  // gate,up(2048->16384) down(16384->2048)
  const std::uint64_t per_layer =
      8ull * ((2048 + 2048) * 2 + (2048 + 256) * 2 + (2048 + 16384) * 3);
  EXPECT_EQ(per_layer, 544768u);
  EXPECT_EQ(lora_param_count(gemma2b_like(), lc), 18 * per_layer);
}

TEST(LoraCount, TrainableFraction) {
  LoraConfig lc;
  const double f = trainable_fraction(gemma2b_like(), cfg(true, LayerCoverage::all), &lc);
  EXPECT_NEAR(f, (55296.0 + 9805824.0) / 2506172416.0, 1e-15);
  EXPECT_NEAR(f * 100.0, 0.39, 0.005);
  EXPECT_NEAR(trainable_fraction(gemma2b_like(), cfg(true, LayerCoverage::all), nullptr),
              55296.0 / 2506172416.0, 1e-15);
}

TEST(LoraCount, UnknownAndAbsentTargets) {
  LoraConfig lc;
  lc.target_modules = {"q_proj", "bogus"};
  EXPECT_THROW(lora_param_count(toy_config(), lc), ConfigError);
  lc.target_modules = {"gate_proj"};
  EXPECT_EQ(lora_param_count(toy_config(), lc), 0u);
  lc.target_modules = {"up_proj"};
  EXPECT_EQ(lora_param_count(toy_config(), lc), 2u * 8 * (64 + 256));
  auto w = init_lora(toy_config(), lc, 1);
  EXPECT_EQ(w.parameter_count(), lora_param_count(toy_config(), lc));
}

TEST(Lora, InitialisationAndEffectiveWeight) {
  LoraConfig lc;
  auto w = init_lora(toy_config(), lc, 2);
  for (const auto& layer : w.layers) {
    for (const auto& [name, pair] : layer) {
      for (double v : pair.b.values()) EXPECT_EQ(v, 0.0) << name;
      const double bound = 1.0 / std::sqrt(static_cast<double>(pair.a.cols()));
      for (double v : pair.a.values()) EXPECT_LE(std::abs(v), bound) << name;
    }
  }
  // W0 + (alpha/r) B A by hand: r=1, alpha=2.
  Tape tape;
  auto w0 = Tensor::from(2, 2, {1, 0, 0, 1});
  auto a = Tensor::from(1, 2, {1, 2}, true);
  auto b = Tensor::from(2, 1, {3, 4}, true);
  auto eff = effective_weight(tape, w0, a, b, 2.0, 1);
  EXPECT_EQ(eff.at(0, 0), 1 + 2 * 3 * 1);
  EXPECT_EQ(eff.at(0, 1), 2 * 3 * 2);
  EXPECT_EQ(eff.at(1, 0), 2 * 4 * 1);
  EXPECT_EQ(eff.at(1, 1), 1 + 2 * 4 * 2);
}

TEST(Lora, ConfigValidation) {
  LoraConfig lc;
  lc.r = 0;
  EXPECT_THROW(lc.validate(), ConfigError);
  lc = LoraConfig{};
  lc.dropout = 1.0;
  EXPECT_THROW(lc.validate(), ConfigError);
}

class Prefix : public ::testing::Test {
 protected:
  Prefix() {
    traits = TraitSpec::normalized({"a", "b", "c", "d", "e"});
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    for (bool bias : {false, true}) {
      auto a = init_adapter(toy_config(), cfg(bias, LayerCoverage::all), traits, 3);
      for (auto* bucket : {&a.key, &a.value})
        for (auto& m : *bucket)
          for (auto& v : m.mutable_values()) v = n(rng);
      (bias ? biased : plain) = a;
    }
  }
  KVPrefix prefix(const AdapterWeights& a, std::vector<double> psi) {
    Tape tape;
    return make_prefix(tape, TraitVector{std::move(psi)}, a, toy_config());
  }
  TraitSpec traits;
  AdapterWeights plain, biased;
};

TEST_F(Prefix, ZeroInputNoBias) {
  auto p = prefix(plain, {0, 0, 0, 0, 0});
  for (const auto& s : p.layers) {
    for (double v : s->key.values()) EXPECT_EQ(v, 0.0);
    for (double v : s->value.values()) EXPECT_EQ(v, 0.0);
  }
}

TEST_F(Prefix, BasisExtraction) {
  auto p = prefix(plain, {1, 0, 0, 0, 0});
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t c = 0; c < 64; ++c) {
      EXPECT_EQ(p.layers[l]->key.at(0, c), plain.key[l].at(0, c));
      EXPECT_EQ(p.layers[l]->value.at(0, c), plain.value[l].at(0, c));
    }
  }
}

TEST_F(Prefix, ScaledRowPlusBias) {
  auto p = prefix(biased, {0, 0, 3, 0, 0});
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t c = 0; c < 64; ++c) {
      EXPECT_NEAR(p.layers[l]->key.at(0, c), 3 * biased.key[l].at(2, c) + biased.key[l].at(5, c),
                  1e-12);
      EXPECT_NEAR(p.layers[l]->value.at(0, c),
                  3 * biased.value[l].at(2, c) + biased.value[l].at(5, c), 1e-12);
    }
  }
}

TEST_F(Prefix, Linearity) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> p1(5), p2(5), mix(5);
    const double alpha = n(rng), beta = n(rng);
    for (int i = 0; i < 5; ++i) {
      p1[i] = n(rng);
      p2[i] = n(rng);
      mix[i] = alpha * p1[i] + beta * p2[i];
    }
    auto a = prefix(plain, p1), b = prefix(plain, p2), m = prefix(plain, mix);
    for (std::size_t l = 0; l < 2; ++l) {
      for (std::size_t c = 0; c < 64; ++c) {
        EXPECT_NEAR(m.layers[l]->key.at(0, c),
                    alpha * a.layers[l]->key.at(0, c) + beta * b.layers[l]->key.at(0, c), 1e-10);
        EXPECT_NEAR(m.layers[l]->value.at(0, c),
                    alpha * a.layers[l]->value.at(0, c) + beta * b.layers[l]->value.at(0, c),
                    1e-10);
      }
    }
  }
}

TEST_F(Prefix, AllButLastLeavesFinalLayerUncovered) {
  auto a = init_adapter(toy_config(), cfg(true, LayerCoverage::all_but_last), traits, 1);
  auto p = prefix(a, {1, 1, 1, 1, 1});
  EXPECT_TRUE(p.covers(0));
  EXPECT_FALSE(p.covers(1));
}

TEST_F(Prefix, DimensionMismatch) {
  EXPECT_THROW(prefix(plain, {1, 2, 3, 4}), ShapeError);
  ModelConfig other = toy_config();
  other.n_layers = 3;
  Tape tape;
  EXPECT_THROW(make_prefix(tape, TraitVector{{1, 2, 3, 4, 5}}, plain, other), ShapeError);
}

TEST_F(Prefix, GradientFlowThroughPsiAndMatrices) {
  auto weights = init_model(toy_config(), 11);
  auto adapter = biased;
  for (auto* bucket : {&adapter.key, &adapter.value})
    for (auto& m : *bucket)
      for (auto& v : m.mutable_values()) v *= 0.3;
  auto psi = Tensor::from(1, 5, {0.4, -1.2, 0.7, 2.0, -0.3}, true);
  std::vector<int> toks{2, 40, 77, 13, 150, 3};
  std::vector<int> targets(toks.begin() + 1, toks.end());
  targets.push_back(0);
  std::vector<Tensor> params = adapter.parameters();
  params.push_back(psi);
  auto res = ad::finite_diff_check(
      [&](Tape& tape) {
        auto p = make_prefix(tape, psi, adapter, weights.config);
        return tape.cross_entropy_mean(forward(tape, weights, toks, &p, true), targets);
      },
      params, 2e-3, true);
  EXPECT_LT(res.max_rel_error, 1e-5) << "param " << res.worst_param << "[" << res.worst_index
                                     << "] analytic " << res.worst_analytic << " numeric "
                                     << res.worst_numeric;
}

class AdapterFile : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = std::filesystem::temp_directory_path() /
          ("psya_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    std::filesystem::create_directories(dir);
    traits = TraitSpec::normalized({"a", "b", "c", "d", "e"});
    traits.mu = {1, 2, 3, 4, 5};
    traits.sigma = {0.5, 1, 1.5, 2, 2.5};
  }
  void TearDown() override { std::filesystem::remove_all(dir); }
  std::filesystem::path dir;
  TraitSpec traits;
};

TEST_F(AdapterFile, RoundTripBitwise) {
  auto a = init_adapter(toy_config(), cfg(true, LayerCoverage::all), traits, 8);
  LoraConfig lc;
  auto lora = init_lora(toy_config(), lc, 9);
  for (auto& t : lora.parameters())
    for (auto& v : Tensor(t).mutable_values()) v = static_cast<float>(v + 0.125);
  for (auto* bucket : {&a.key, &a.value})
    for (auto& m : *bucket)
      for (auto& v : m.mutable_values()) v = static_cast<float>(v);
  save_adapter(dir / "a.bin", a, &lora);
  auto loaded = load_adapter(dir / "a.bin");
  EXPECT_EQ(loaded.adapter.traits, a.traits);
  EXPECT_EQ(loaded.adapter.model, a.model);
  ASSERT_EQ(loaded.adapter.key.size(), a.key.size());
  for (std::size_t l = 0; l < a.key.size(); ++l) {
    EXPECT_TRUE(std::equal(a.key[l].values().begin(), a.key[l].values().end(),
                           loaded.adapter.key[l].values().begin()));
    EXPECT_TRUE(std::equal(a.value[l].values().begin(), a.value[l].values().end(),
                           loaded.adapter.value[l].values().begin()));
  }
  ASSERT_TRUE(loaded.lora.has_value());
  auto pa = lora.parameters(), pb = loaded.lora->parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_TRUE(std::equal(pa[i].values().begin(), pa[i].values().end(), pb[i].values().begin()));
  }
  save_adapter(dir / "b.bin", loaded.adapter, &*loaded.lora);
  EXPECT_EQ(io::read_bytes(dir / "a.bin"), io::read_bytes(dir / "b.bin"));
}

TEST_F(AdapterFile, WithoutLora) {
  auto a = init_adapter(toy_config(), cfg(false, LayerCoverage::all_but_last), traits, 8);
  save_adapter(dir / "a.bin", a);
  auto loaded = load_adapter(dir / "a.bin");
  EXPECT_FALSE(loaded.lora.has_value());
  EXPECT_EQ(loaded.adapter.config.coverage, LayerCoverage::all_but_last);
  EXPECT_FALSE(loaded.adapter.config.use_bias);
  EXPECT_EQ(loaded.adapter.key.size(), 1u);
}

TEST_F(AdapterFile, ShapeMismatchAgainstMetadata) {
  auto a = init_adapter(toy_config(), cfg(false, LayerCoverage::all), traits, 8);
  save_adapter(dir / "a.bin", a);
  auto c = io::read_file(dir / "a.bin", kAdapterMagic);
  // Declared d_psi = 5 but the first matrix only has 4 rows.
  c.arrays[0].rows = 4;
  c.arrays[0].data.resize(4 * 64);
  io::write_file(dir / "bad.bin", kAdapterMagic, c);
  try {
    load_adapter(dir / "bad.bin");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatErrorKind::metadata_mismatch);
  }
}

TEST_F(AdapterFile, TruncatedAndCorrupt) {
  auto a = init_adapter(toy_config(), cfg(true, LayerCoverage::all), traits, 8);
  save_adapter(dir / "a.bin", a);
  auto bytes = io::read_bytes(dir / "a.bin");
  auto cut = bytes;
  cut.pop_back();
  io::write_bytes(dir / "cut.bin", cut);
  try {
    load_adapter(dir / "cut.bin");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatErrorKind::truncated);
  }
  auto corrupt = bytes;
  corrupt[16] = '!';  // first byte of the JSON block
  io::write_bytes(dir / "corrupt.bin", corrupt);
  try {
    load_adapter(dir / "corrupt.bin");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatErrorKind::corrupt_header);
  }
  // A model file is not an adapter.
  save_model(dir / "m.bin", init_model(toy_config(), 1));
  try {
    load_adapter(dir / "m.bin");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.kind(), FormatErrorKind::bad_magic);
  }
}

}  // namespace
}  // namespace psyadapter
