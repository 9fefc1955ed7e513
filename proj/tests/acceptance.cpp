// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "psyadapter/container.hpp"
#include "psyadapter/errors.hpp"
#include "psyadapter/eval.hpp"
#include "psyadapter/experiment.hpp"
#include "psyadapter/stats.hpp"

using namespace psyadapter;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  // Records a failed check; the first few messages end up in the detail line.
  void check(bool ok, const std::string& what) {
    if (ok) return;
    if (pass) detail << " | failed:";
    pass = false;
    detail << " " << what << ";";
  }
};

void info(const std::string& s) { std::cout << "  info: " << s << std::endl; }

std::string fmt(double v, int prec = 6) {
  std::ostringstream o;
  o << std::setprecision(prec) << v;
  return o.str();
}

int failures = 0;

void criterion(int n, const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.check(false, std::string("exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << name << ":" << o.detail.str() << " ("
            << std::fixed << std::setprecision(1) << secs << " s)" << std::defaultfloat << std::endl;
}

template <class E, class F>
bool throws(F&& f) {
  try {
    f();
  } catch (const E&) {
    return true;
  } catch (...) {
    return false;
  }
  return false;
}

template <class F>
std::optional<FormatErrorKind> format_kind(F&& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.kind();
  } catch (...) {
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

void parameter_counts(Outcome& o) {
  AdapterConfig ac;
  ac.latent_size = 5;
  ac.use_bias = true;
  ac.coverage = LayerCoverage::all;
  const std::pair<const char*, std::uint64_t> expected[] = {
      {"gemma2b-like", 55'296}, {"gpt2large-like", 552'960}, {"llama3-8b-like", 393'216}};
  for (const auto& [name, want] : expected) {
    const auto got = adapter_param_count(preset(name), ac);
    o.detail << " " << name << " " << got;
    o.check(got == want, std::string(name) + " expected " + std::to_string(want));
  }
}

void trainable_fraction_check(Outcome& o) {
  const auto m = gemma2b_like();
  AdapterConfig ac;
  LoraConfig lc;
  const auto adapter = adapter_param_count(m, ac);
  const auto lora = lora_param_count(m, lc);
  const auto base = count_base_params(m);
  const double pct = 100.0 * trainable_fraction(m, ac, &lc);
  o.detail << " (" << adapter << " + " << lora << ") / " << base << " = " << fmt(pct, 5) << "%";
  o.check(adapter == 55'296 && lora == 9'805'824 && base == 2'506'172'416ULL, "component counts");
  o.check(std::abs(pct - 0.39) <= 0.005, "fraction outside 0.39 +- 0.005 pp");
}

void circumplex(Outcome& o) {
  double worst_norm = 0, worst_round = 0;
  for (double w = -3.0; w <= 3.0; w += 0.25) {
    for (double d = -3.0; d <= 3.0; d += 0.25) {
      const auto t = circumplex_to_traits(w, d);
      worst_norm = std::max(worst_norm, std::abs(std::hypot(t.extraversion, t.agreeableness) - std::hypot(w, d)));
      const auto back = traits_to_circumplex(t.extraversion, t.agreeableness);
      worst_round = std::max({worst_round, std::abs(back.warmth - w), std::abs(back.dominance - d)});
    }
  }
  const auto p = circumplex_to_traits(3.0, 0.0, 22.5);
  o.detail << " (3,0) -> (" << std::fixed << std::setprecision(6) << p.extraversion << ", " << p.agreeableness
           << ")" << std::defaultfloat << ", norm err " << fmt(worst_norm, 3) << ", round-trip err "
           << fmt(worst_round, 3);
  o.check(worst_norm <= 1e-9, "norm preservation");
  o.check(worst_round <= 1e-9, "round trip");
  o.check(std::abs(p.extraversion - 2.771639) <= 1e-5 && std::abs(p.agreeableness - 1.148050) <= 1e-5,
          "(3,0) mapping");
}

AdapterWeights toy_adapter(std::uint64_t seed) {
  AdapterConfig ac;
  ac.latent_size = 2;
  return init_adapter(toy_config(), ac, TraitSpec::normalized({"extraversion", "neuroticism"}), seed);
}

void gradient_check(Outcome& o) {
  const auto model = init_model(toy_config(), 4);
  auto adapter = toy_adapter(5);
  LoraConfig lc;
  auto lora = init_lora(toy_config(), lc, 6);
  // B starts at zero; move it off zero so the A gradients are exercised too.
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nb(0.0, 0.05);
  for (auto& layer : lora.layers)
    for (auto& [name, pair] : layer)
      for (auto& v : pair.b.mutable_values()) v = nb(rng);
  std::vector<ad::Tensor> params = adapter.parameters();
  for (const auto& t : lora.parameters()) params.push_back(t);
  const auto psi = ad::Tensor::from(1, 2, {1.5, -0.7});
  const std::vector<int> toks{2, 40, 77, 13, 150, 3};
  auto f = [&](ad::Tape& tape) { return sequence_nll(tape, model, adapter, &lora, psi, toks); };
  const auto res = ad::finite_diff_check(f, params, 2e-3, true);
  o.detail << " " << res.checked << " parameters, max relative error " << fmt(res.max_rel_error, 3)
           << " (extrapolated central differences, h 2e-3)";
  o.check(res.checked == adapter.parameter_count() + lora.parameter_count(), "parameter coverage");
  o.check(res.max_rel_error < 1e-5, "max relative error >= 1e-5");
  const auto plain = ad::finite_diff_check(f, params, 1e-4);
  info("plain central differences at eps 1e-4: max relative error " + fmt(plain.max_rel_error, 3) +
       " (roundoff and truncation limited on near-zero gradients)");
}

std::vector<Example> toy_examples(Split split, std::size_t n) {
  auto recs = generate_synthetic_corpus(default_synth_spec(2), n, 21);
  std::vector<std::string> texts;
  for (auto& r : recs) {
    texts.push_back(r.text);
    r.scores = r.latent;
  }
  return make_examples(recs, Tokenizer::build(texts, 1), 32, split);
}

void freeze_contract(Outcome& o) {
  const auto tr = toy_examples(Split::train, 400), va = toy_examples(Split::validation, 400);
  const auto model = init_model(toy_config(), 8);
  std::vector<std::vector<double>> before;
  for (const auto& [name, t] : model.named_parameters()) before.emplace_back(t.values().begin(), t.values().end());
  auto adapter = toy_adapter(9);
  LoraConfig lc;
  auto lora = init_lora(toy_config(), lc, 10);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.batch_size = 8;
  tc.steps = 50;
  tc.seed = 11;
  tc.eval_limit = 32;
  const auto rep = train(model, adapter, &lora, tr, va, tc);
  std::size_t i = 0, changed = 0, tensors = 0;
  for (const auto& [name, t] : model.named_parameters()) {
    const auto& b = before[i++];
    ++tensors;
    if (b.size() != t.values().size() || std::memcmp(b.data(), t.values().data(), b.size() * sizeof(double)) != 0)
      ++changed;
  }
  const auto census = adapter_param_count(toy_config(), adapter.config) + lora_param_count(toy_config(), lc);
  o.detail << " " << rep.steps << " steps, " << changed << "/" << tensors << " base tensors changed, census "
           << rep.trainable_params << " = " << census;
  o.check(rep.steps == 50, "step count");
  o.check(changed == 0, "base weights changed");
  o.check(rep.trainable_params == census, "census mismatch");
}

// ---------------------------------------------------------------------------

struct Steer {
  Experiment ex;
  SamplingConfig sampling;
};

std::vector<std::string> samples(const Steer& s, std::size_t dim, double k, std::size_t n, std::uint64_t seed) {
  SamplingConfig sc = s.sampling;
  sc.seed = seed;
  const auto& traits = s.ex.adapter.traits;
  return generate_many(s.ex.generator(), build_vector(traits, {{traits.names[dim], k}}), "", sc, n);
}

void steerability(Outcome& o, const Steer& s) {
  const auto& ex = s.ex;
  o.detail << " " << ex.train_report.steps << " steps on " << ex.corpus.size() << " messages, "
           << ex.spec.dimensions.size() << " dimensions;";
  o.check(ex.train_report.steps >= 2000, "fewer than 2000 steps");
  o.check(ex.corpus.size() >= 5000, "fewer than 5000 messages");
  o.check(ex.spec.dimensions.size() == 2, "dimension count");
  const auto scheme = LevelScheme::three();
  for (std::size_t d = 0; d < ex.spec.dimensions.size(); ++d) {
    const auto& name = ex.spec.dimensions[d];
    const auto& lex = ex.spec.high[d];
    double hi = 0, lo = 0;
    for (const auto& t : samples(s, d, 3.0, 200, 1000 + d)) hi += lexicon_rate(t, lex) / 200.0;
    for (const auto& t : samples(s, d, -3.0, 200, 2000 + d)) lo += lexicon_rate(t, lex) / 200.0;
    const TextSource source = generator_source(ex.generator(), ex.adapter.traits, s.sampling);
    const Judge judge = oracle_judge(ex.scoring, ex.extractor, name);
    std::vector<Trial> trials;
    for (std::uint64_t t = 0; t < scheme.trials; ++t)
      trials.push_back(run_trial(source, scheme, d, name, judge, 100 * (d + 1) + t));
    const auto rep = aggregate(trials, scheme);
    o.detail << " " << name << " gap " << fmt(hi - lo, 3) << " (" << fmt(hi, 3) << " vs " << fmt(lo, 3)
             << "), 3-level accuracy " << fmt(rep.overall, 3) << " over " << rep.trials << " trials;";
    o.check(hi - lo >= 0.3, name + " gap below 0.3");
    o.check(rep.failed == 0 && rep.trials == 10, name + " trial failures");
    o.check(rep.overall >= 0.80, name + " accuracy below 0.80");
  }
  const auto& tr = ex.train_report;
  info("trait-conditioned validation loss " + fmt(tr.initial_validation_loss, 5) + " -> " +
       fmt(tr.final_validation_loss, 5) + "; untrained model loss " +
       fmt(ex.pretrain_report.initial_validation_loss, 5) + " (0.9x = " +
       fmt(0.9 * ex.pretrain_report.initial_validation_loss, 5) + ")");
}

void five_levels(Outcome& o, const Steer& s) {
  const std::vector<double> ks{-3.0, -1.5, 0.0, 1.5, 3.0};
  for (std::size_t d = 0; d < s.ex.spec.dimensions.size(); ++d) {
    std::vector<double> means;
    for (std::size_t i = 0; i < ks.size(); ++i) {
      double sum = 0;
      std::size_t used = 0;
      for (const auto& t : samples(s, d, ks[i], 200, 5000 + 10 * d + i)) {
        try {
          sum += score_message(s.ex.scoring, s.ex.extractor, t)[d];
          ++used;
        } catch (const EmptyFeatureError&) {
        }
      }
      means.push_back(used ? sum / static_cast<double>(used) : 0.0);
      o.check(used > 0, "no scorable generations");
    }
    const double rho = stats::spearman(ks, means);
    o.detail << " " << s.ex.spec.dimensions[d] << " rho " << fmt(rho, 3) << " means";
    for (double m : means) o.detail << " " << fmt(m, 3);
    o.detail << ";";
    o.check(rho >= 0.9, s.ex.spec.dimensions[d] + " rho below 0.9");
  }
}

// ---------------------------------------------------------------------------

void scoring_recovery(Outcome& o) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  const std::size_t rows = 50, width = 10, traits = 2;
  std::vector<std::vector<double>> X(rows, std::vector<double>(width)), Psi(rows, std::vector<double>(traits, 0.0));
  std::vector<double> wstar(traits * width);
  for (auto& w : wstar) w = n(rng);
  for (auto& row : X)
    for (auto& v : row) v = n(rng);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < traits; ++j)
      for (std::size_t i = 0; i < width; ++i) Psi[r][j] += X[r][i] * wstar[j * width + i];
  const auto m = fit_scoring_model(X, Psi, 0.0, {"a", "b"});
  double num = 0, den = 0, worst = 0;
  for (std::size_t i = 0; i < wstar.size(); ++i) {
    num += (m.weights[i] - wstar[i]) * (m.weights[i] - wstar[i]);
    den += wstar[i] * wstar[i];
    worst = std::max(worst, std::abs(m.weights[i] - wstar[i]) / std::abs(wstar[i]));
  }
  const double rel = std::sqrt(num / den);
  const auto ridge = fit_scoring_model({{1.0}}, {{2.0}}, 1.0, {"t"});
  o.detail << " planted relative error " << fmt(rel, 3) << " (elementwise max " << fmt(worst, 3)
           << "), ridge w = " << fmt(ridge.weights[0], 17);
  o.check(worst <= 1e-6, "planted recovery");
  o.check(std::abs(ridge.weights[0] - 1.0) <= 1e-12, "ridge shrinkage");
}

void metric_suite(Outcome& o) {
  using L = std::vector<std::size_t>;
  const L lnh{0, 1, 2};
  o.check(partial_credit(lnh, L{0, 1, 2}) == 1.0, "partial credit 1.0");
  o.check(std::abs(partial_credit(lnh, L{0, 0, 0}) - 1.0 / 3.0) < 1e-15, "partial credit (L,L,L)");
  o.check(std::abs(partial_credit(lnh, L{1, 0, 2}) - 1.0 / 3.0) < 1e-15, "partial credit (N,L,H)");

  const auto scheme = LevelScheme::three();
  const TextSource dummy = [](std::size_t, double k, std::size_t n, std::uint64_t) {
    return std::vector<std::string>(n, std::to_string(k));
  };
  const auto judge = random_judge(5);
  std::vector<Trial> trials;
  for (std::uint64_t s = 0; s < 1000; ++s) trials.push_back(run_trial(dummy, scheme, 0, "x", judge, s));
  const auto rep = aggregate(trials, scheme);
  o.detail << " random judge " << fmt(rep.overall, 4) << " over " << rep.trials << " trials;";
  o.check(std::abs(rep.overall - 1.0 / 3.0) <= 0.05, "random judge outside 0.333 +- 0.05");

  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> lab(0, 4);
  double worst_self = 0, worst_sym = 0;
  for (int rep_i = 0; rep_i < 50; ++rep_i) {
    L a(20), b(20);
    for (auto& x : a) x = lab(rng);
    for (auto& x : b) x = lab(rng);
    for (auto w : {KappaWeighting::linear, KappaWeighting::quadratic}) {
      worst_self = std::max(worst_self, std::abs(weighted_kappa(a, a, 5, w) - 1.0));
      worst_sym = std::max(worst_sym, std::abs(weighted_kappa(a, b, 5, w) - weighted_kappa(b, a, 5, w)));
    }
  }
  o.detail << " kappa self-agreement err " << fmt(worst_self, 3) << ", asymmetry " << fmt(worst_sym, 3) << ";";
  o.check(worst_self <= 1e-12, "kappa self-agreement");
  o.check(worst_sym <= 1e-12, "kappa symmetry");
  o.check(std::abs(weighted_kappa(L{0, 1, 2, 0, 1, 2}, L{2, 1, 0, 2, 1, 0}, 3) + 0.5) < 1e-12, "reversed raters");
  const bool degenerate = throws<NumericError>([] { weighted_kappa(L{2, 2, 2}, L{2, 2, 2}, 3); });
  o.detail << " degenerate kappa raises " << (degenerate ? "NumericError" : "nothing");
  o.check(degenerate, "degenerate kappa");
}

// ---------------------------------------------------------------------------

struct Artifacts {
  std::vector<std::uint8_t> corpus, scoring, base, adapter;
  std::string report, generations;
};

Artifacts pipeline(const fs::path& dir) {
  fs::create_directories(dir);
  const auto spec = default_synth_spec(2);
  const auto raw = generate_synthetic_corpus(spec, 600, 9);
  save_corpus(dir / "corpus.jsonl", raw);
  auto fitted = fit_scoring(raw, spec.dimensions, 1e-3);
  save_scoring(dir / "scoring.bin", fitted.model, fitted.extractor);
  const auto annotated = annotate_corpus(raw, fitted.model, fitted.extractor).records;
  std::vector<std::string> texts;
  for (const auto& r : raw) texts.push_back(r.text);
  const auto tok = Tokenizer::build(texts, 1);
  auto model = init_model(toy_config(), 3);
  TrainConfig tc;
  tc.lr = 3e-3;
  tc.batch_size = 8;
  tc.steps = 15;
  tc.seed = 4;
  tc.eval_limit = 16;
  const auto gtr = make_examples(annotated, tok, 32, Split::train);
  const auto gva = make_examples(annotated, tok, 32, Split::validation);
  pretrain_base(model, gtr, gva, tc);
  save_model(dir / "base.bin", model, {{"tokenizer", tok}});
  AdapterConfig ac;
  ac.latent_size = 2;
  auto adapter = init_adapter(toy_config(), ac, TraitSpec::normalized(spec.dimensions), 5);
  LoraConfig lc;
  auto lora = init_lora(toy_config(), lc, 6);
  tc.seed = 7;
  const auto rep = train(model, adapter, &lora, gtr, gva, tc);
  save_adapter(dir / "adapter.bin", adapter, &lora);
  Artifacts a;
  a.corpus = io::read_bytes(dir / "corpus.jsonl");
  a.scoring = io::read_bytes(dir / "scoring.bin");
  a.base = io::read_bytes(dir / "base.bin");
  a.adapter = io::read_bytes(dir / "adapter.bin");
  a.report = to_json(rep).dump();
  SamplingConfig sc;
  sc.seed = 11;
  for (const auto& g : generate_many({&model, &adapter, &lora, &tok}, TraitVector{{2.0, -1.0}}, "i", sc, 5))
    a.generations += g + "\n";
  return a;
}

void determinism(Outcome& o, const fs::path& tmp) {
  const auto a = pipeline(tmp / "run_a");
  const auto b = pipeline(tmp / "run_b");
  o.check(a.corpus == b.corpus, "corpus bytes differ");
  o.check(a.scoring == b.scoring, "scoring bytes differ");
  o.check(a.base == b.base, "base checkpoint bytes differ");
  o.check(a.adapter == b.adapter, "adapter checkpoint bytes differ");
  o.check(a.report == b.report, "train report differs");
  o.check(a.generations == b.generations, "generations differ");
  o.detail << " two seeded runs: corpus " << a.corpus.size() << " B, base " << a.base.size() << " B, adapter "
           << a.adapter.size() << " B, generations, report identical=" << (a.report == b.report);

  const auto dir = tmp / "run_a";
  const auto loaded = load_adapter(dir / "adapter.bin");
  save_adapter(dir / "adapter2.bin", loaded.adapter, loaded.lora ? &*loaded.lora : nullptr);
  o.check(io::read_bytes(dir / "adapter2.bin") == a.adapter, "PSYADPT1 round trip");
  const auto lm = load_model(dir / "base.bin");
  save_model(dir / "base2.bin", lm.weights, lm.extra);
  o.check(io::read_bytes(dir / "base2.bin") == a.base, "model round trip");
  save_corpus(dir / "corpus2.jsonl", load_corpus(dir / "corpus.jsonl"));
  o.check(io::read_bytes(dir / "corpus2.jsonl") == a.corpus, "corpus round trip");
  o.detail << "; round trips bit-exact";

  auto bytes = a.adapter;
  bytes.pop_back();
  io::write_bytes(dir / "cut.bin", bytes);
  auto bad = a.adapter;
  bad[0] = 'X';
  io::write_bytes(dir / "magic.bin", bad);
  auto extra = a.base;
  extra.push_back(0);
  io::write_bytes(dir / "extra.bin", extra);
  {
    std::ofstream f(dir / "broken.jsonl");
    f << "{\"text\": \"fine words here and more\", \"scores\": null, \"split\": \"train\"}\n{not json\n";
  }
  const std::pair<std::optional<FormatErrorKind>, FormatErrorKind> cases[] = {
      {format_kind([&] { load_adapter(dir / "cut.bin"); }), FormatErrorKind::truncated},
      {format_kind([&] { load_adapter(dir / "magic.bin"); }), FormatErrorKind::bad_magic},
      {format_kind([&] { load_model(dir / "extra.bin"); }), FormatErrorKind::trailing_data},
      {format_kind([&] { load_adapter(dir / "base.bin"); }), FormatErrorKind::bad_magic},
      {format_kind([&] { load_corpus(dir / "broken.jsonl"); }), FormatErrorKind::malformed_record},
      {format_kind([&] { load_model(dir / "missing.bin"); }), FormatErrorKind::io},
  };
  std::size_t matched = 0;
  for (const auto& [got, want] : cases) {
    matched += got == want;
    o.check(got == want, std::string("expected ") + to_string(want));
  }
  o.detail << "; malformed files " << matched << "/" << std::size(cases) << " mapped to their error kind";
}

void preprocessing_fixture(Outcome& o) {
  std::ifstream raw(std::string(PSY_FIXTURE_DIR) + "/preprocess_raw.jsonl");
  std::ifstream exp(std::string(PSY_FIXTURE_DIR) + "/preprocess_expected.jsonl");
  std::string a, b;
  std::size_t n = 0, matched = 0, truncated_blogs = 0;
  std::set<std::string> reasons;
  while (std::getline(raw, a) && std::getline(exp, b)) {
    const auto ja = nlohmann::json::parse(a), jb = nlohmann::json::parse(b);
    ++n;
    const RawMessage msg{ja.at("text").get<std::string>(), parse_source_kind(ja.at("source").get<std::string>())};
    const auto r = preprocess(msg);
    bool ok = r.accepted() == jb.at("accepted").get<bool>();
    if (ok && r.accepted()) {
      ok = r.record->text == jb.at("text").get<std::string>();
      if (msg.source == SourceKind::blog && word_count(r.record->text) < word_count(msg.text)) ++truncated_blogs;
    } else if (ok) {
      ok = to_string(*r.rejection) == jb.at("reason").get<std::string>();
      reasons.insert(to_string(*r.rejection));
    }
    matched += ok;
    o.check(ok, "fixture id " + std::to_string(ja.at("id").get<int>()));
  }
  o.detail << " " << matched << "/" << n << " match; reasons seen " << reasons.size() << "/2; " << truncated_blogs
           << " blogs truncated";
  o.check(n == 20, "fixture size");
  o.check(reasons == std::set<std::string>{"too_short", "contains_link"}, "rejection reasons");
  o.check(truncated_blogs > 0, "blog truncation not exercised");
}

// ---------------------------------------------------------------------------

struct MockServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> calls{0};
  std::string mode = "ok";

  MockServer() {
    server.Post("/judge", [this](const httplib::Request&, httplib::Response& res) {
      const int n = ++calls;
      if (mode == "slow" && n == 1) std::this_thread::sleep_for(std::chrono::milliseconds(600));
      if (mode == "short") {
        res.set_content(R"({"labels": ["Low", "High"]})", "application/json");
      } else if (mode == "garbage") {
        res.set_content("the first group reads as low", "text/plain");
      } else {
        res.set_content(R"({"labels": ["Low", "Neutral", "High"]})", "application/json");
      }
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~MockServer() {
    server.stop();
    thread.join();
  }
};

void remote_judge_plumbing(Outcome& o) {
  MockServer mock;
  JudgeEndpointConfig cfg;
  cfg.url = "http://127.0.0.1:" + std::to_string(mock.port) + "/judge";
  cfg.model = "mock";
  cfg.timeout_seconds = 0.25;
  cfg.max_retries = 3;
  cfg.backoff_seconds = 0.01;
  const std::string tmpl = "{{levels}}\n{{group_1}}{{group_2}}{{group_3}}";
  const JudgeRequest req{"extraversion", {"Low", "Neutral", "High"}, {{"a"}, {"b"}, {"c"}}};
  std::vector<std::string> log;
  const auto judge = remote_judge(cfg, tmpl, [&](const std::string& s) { log.push_back(s); });

  auto failure = [&](const char* mode) -> std::optional<JudgeFailureKind> {
    mock.mode = mode;
    mock.calls = 0;
    try {
      judge(req);
    } catch (const JudgeError& e) {
      return e.kind();
    }
    return std::nullopt;
  };

  mock.mode = "ok";
  const bool success = judge(req) == std::vector<std::string>{"Low", "Neutral", "High"} && mock.calls == 1;
  o.check(success, "success case");
  const auto short_kind = failure("short");
  o.check(short_kind == JudgeFailureKind::label_count, "short label list");
  log.clear();
  const auto slow_kind = failure("slow");
  const bool retried = !slow_kind && mock.calls == 2 && !log.empty() &&
                       log.back().find("ok after 1 retries") != std::string::npos;
  o.check(retried, "timeout then retry");
  const auto garbage_kind = failure("garbage");
  o.check(garbage_kind == JudgeFailureKind::unparseable && mock.calls == 1, "unparseable body");

  Trial t;
  t.groups = req.groups;
  t.truth = {0, 1, 2};
  mock.mode = "short";
  judge_trial(t, LevelScheme::three(), "extraversion", judge);
  o.check(t.failure == JudgeFailureKind::label_count, "failed trial recorded");
  o.detail << " success ok=" << success << ", short -> "
           << (short_kind ? to_string(*short_kind) : "none") << ", timeout -> retried=" << retried
           << ", garbage -> " << (garbage_kind ? to_string(*garbage_kind) : "none");
}

}  // namespace

int main() {
  std::cout << std::unitbuf;
  const auto tmp = fs::temp_directory_path() / "psyadapter_acceptance";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  criterion(1, "published adapter sizes", parameter_counts);
  criterion(2, "trainable fraction", trainable_fraction_check);
  criterion(3, "circumplex rotation", circumplex);
  criterion(4, "gradient correctness", gradient_check);
  criterion(5, "freeze contract", freeze_contract);

  std::optional<Steer> steer;
  std::string steer_error;
  try {
    std::cout << "  info: running the seeded end-to-end experiment (pretrain + 2000 training steps)" << std::endl;
    ExperimentConfig cfg;
    Steer s{run_experiment(cfg, [](const std::string& stage, const LossPoint& p) {
              if (p.validation_loss)
                info(stage + " step " + std::to_string(p.step) + " validation loss " + fmt(*p.validation_loss, 5));
            }),
            SamplingConfig{}};
    steer = std::move(s);
  } catch (const std::exception& e) {
    steer_error = e.what();
  }
  criterion(6, "end-to-end steerability", [&](Outcome& o) {
    if (!steer) throw std::runtime_error("experiment failed: " + steer_error);
    steerability(o, *steer);
  });
  criterion(7, "five-level monotonicity", [&](Outcome& o) {
    if (!steer) throw std::runtime_error("experiment failed: " + steer_error);
    five_levels(o, *steer);
  });

  criterion(8, "scoring-model recovery", scoring_recovery);
  criterion(9, "metric suite", metric_suite);
  criterion(10, "determinism and serialization", [&](Outcome& o) { determinism(o, tmp); });
  criterion(11, "preprocessing fixture", preprocessing_fixture);
  criterion(12, "remote judge plumbing", remote_judge_plumbing);

  fs::remove_all(tmp);
  std::cout << (failures == 0 ? "all 12 criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
