// SPDX-License-Identifier: Apache-2.0
//
// psyadapt: corpus preparation, scoring, training, generation and evaluation.
// Exit status 0 on success, 1 on input/usage errors, 2 on judge or I/O failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "psyadapter/errors.hpp"
#include "psyadapter/eval.hpp"
#include "psyadapter/experiment.hpp"

namespace fs = std::filesystem;
using namespace psyadapter;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kInputFailure = 1;
constexpr int kRuntimeFailure = 2;

std::string grouped(std::uint64_t n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError(FormatErrorKind::io, "cannot write " + path.string());
  f << text;
  if (!f) throw FormatError(FormatErrorKind::io, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(FormatErrorKind::io, "cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw InputError("missing " + what + " (no path given)");
  if (!fs::is_regular_file(path)) throw InputError("missing " + what + ": " + path);
}

// Every output directory gets the subcommand's effective configuration, and
// every JSON report embeds it.
struct Output {
  fs::path dir;
  std::string config;

  void open(const std::string& d, const CLI::App& sub) {
    dir = d;
    config = "[" + sub.get_name() + "]\n" + sub.config_to_str(true, false);
    fs::create_directories(dir);
    write_text(dir / "effective_config.toml", config);
  }
  fs::path operator/(const std::string& name) const { return dir / name; }
  void report(const std::string& name, json j) const {
    j["effective_config"] = config;
    write_text(dir / name, j.dump(2) + "\n");
  }
};

void train_options(CLI::App* sub, TrainConfig& t) {
  sub->add_option("--steps", t.steps, "optimizer steps")->capture_default_str();
  sub->add_option("--lr", t.lr, "learning rate")->capture_default_str();
  sub->add_option("--batch", t.batch_size, "batch size")->capture_default_str();
  sub->add_option("--seed", t.seed, "batch order / dropout seed")->capture_default_str();
  sub->add_option("--max-seq-len", t.max_seq_len, "tokens per sequence incl. [BOS]/[EOS]")->capture_default_str();
  sub->add_option("--eval-every", t.eval_every, "validation cadence (0: start and end)")->capture_default_str();
  sub->add_option("--eval-limit", t.eval_limit, "validation sequences per evaluation (0: all)")->capture_default_str();
}

void progress_line(const std::string& stage, const LossPoint& p) {
  if (p.step % 100 != 0 && !p.validation_loss) return;
  std::fprintf(stderr, "%s step %zu loss %.4f", stage.c_str(), p.step, p.train_loss);
  if (p.validation_loss) std::fprintf(stderr, " val %.4f", *p.validation_loss);
  std::fprintf(stderr, "\n");
}

struct Checkpoint {
  ModelWeights model;
  Tokenizer tokenizer;
  std::optional<AdapterWeights> adapter;
  std::optional<LoraWeights> lora;
};

Checkpoint load_checkpoint(const std::string& base, const std::string& adapter, bool need_adapter) {
  require_file(base, "checkpoint (base model)");
  if (need_adapter || !adapter.empty()) require_file(adapter, "checkpoint (adapter)");
  Checkpoint c;
  auto lm = load_model(base);
  c.model = std::move(lm.weights);
  if (!lm.extra.contains("tokenizer")) throw InputError(base + " carries no tokenizer");
  c.tokenizer = lm.extra.at("tokenizer").get<Tokenizer>();
  if (!adapter.empty()) {
    auto la = load_adapter(adapter);
    if (!(la.adapter.model == c.model.config)) {
      throw InputError("adapter " + adapter + " was built for a different model");
    }
    c.adapter = std::move(la.adapter);
    c.lora = std::move(la.lora);
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trait-conditioned language generation toolkit"};
  app.set_config("--config", "", "TOML file with one [subcommand] section");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1, 1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic trait corpus");
  std::size_t synth_n = 6000, synth_dims = 2;
  std::uint64_t synth_seed = 2;
  SynthSpec synth_defaults = default_synth_spec(2);
  double synth_mixing = synth_defaults.mixing_strength, synth_density = synth_defaults.marker_density;
  std::size_t synth_per_author = synth_defaults.messages_per_author;
  double synth_val = synth_defaults.validation_fraction;
  std::string synth_out = "out";
  synth->add_option("--n", synth_n, "messages")->capture_default_str();
  synth->add_option("--seed", synth_seed)->capture_default_str();
  synth->add_option("--dimensions", synth_dims)->capture_default_str();
  synth->add_option("--mixing", synth_mixing, "logistic slope from latent to lexicon choice")->capture_default_str();
  synth->add_option("--density", synth_density, "share of marker-word slots")->capture_default_str();
  synth->add_option("--per-author", synth_per_author, "messages per author")->capture_default_str();
  synth->add_option("--validation-fraction", synth_val)->capture_default_str();
  synth->add_option("--out-dir", synth_out)->capture_default_str();

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "clean raw messages (JSONL: text, source)");
  std::string prep_in, prep_out = "out";
  prep->add_option("--input", prep_in, "raw JSONL")->required();
  prep->add_option("--out-dir", prep_out)->capture_default_str();

  // score-fit
  auto* sfit = app.add_subcommand("score-fit", "fit the participant-level scoring model");
  std::string sfit_corpus, sfit_traits, sfit_out = "out";
  double sfit_lambda = 1e-3;
  sfit->add_option("--corpus", sfit_corpus, "corpus JSONL with latent/author or scores")->required();
  sfit->add_option("--lambda", sfit_lambda, "ridge penalty")->capture_default_str();
  sfit->add_option("--traits", sfit_traits, "comma-separated names (default: synthetic dimensions)");
  sfit->add_option("--out-dir", sfit_out)->capture_default_str();

  // score-apply
  auto* sapp = app.add_subcommand("score-apply", "annotate a corpus with estimated scores");
  std::string sapp_scoring, sapp_corpus, sapp_out = "out";
  sapp->add_option("--scoring", sapp_scoring, "PSYSCOR1 file")->required();
  sapp->add_option("--corpus", sapp_corpus)->required();
  sapp->add_option("--out-dir", sapp_out)->capture_default_str();

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train the unconditioned base model");
  ExperimentConfig exp_defaults;
  TrainConfig pre_cfg = exp_defaults.pretrain;
  std::string pre_corpus, pre_out = "out";
  std::uint64_t pre_model_seed = exp_defaults.model_seed;
  std::size_t pre_min_count = 2;
  std::string pre_model = "toy";
  pre->add_option("--corpus", pre_corpus, "unlabeled corpus JSONL")->required();
  pre->add_option("--model", pre_model, "model preset")->capture_default_str();
  pre->add_option("--model-seed", pre_model_seed)->capture_default_str();
  pre->add_option("--min-count", pre_min_count, "tokenizer frequency cutoff")->capture_default_str();
  train_options(pre, pre_cfg);
  pre->add_option("--out-dir", pre_out)->capture_default_str();

  // train
  auto* trn = app.add_subcommand("train", "train adapter + LoRA on an annotated corpus");
  TrainConfig trn_cfg = exp_defaults.train;
  std::string trn_base, trn_corpus, trn_traits = "extraversion,neuroticism", trn_out = "out";
  std::string trn_coverage = "all";
  bool trn_bias = true, trn_no_lora = false;
  std::uint64_t trn_adapter_seed = exp_defaults.adapter_seed, trn_lora_seed = exp_defaults.lora_seed;
  LoraConfig trn_lora;
  std::string trn_targets;
  trn->add_option("--base", trn_base, "base model file")->required();
  trn->add_option("--corpus", trn_corpus, "annotated corpus JSONL")->required();
  trn->add_option("--traits", trn_traits, "names of the score columns")->capture_default_str();
  trn->add_flag("--bias,!--no-bias", trn_bias, "append a constant 1 to psi")->capture_default_str();
  trn->add_option("--coverage", trn_coverage, "all | all_but_last")->capture_default_str();
  trn->add_option("--adapter-seed", trn_adapter_seed)->capture_default_str();
  trn->add_option("--lora-seed", trn_lora_seed)->capture_default_str();
  trn->add_option("--lora-r", trn_lora.r)->capture_default_str();
  trn->add_option("--lora-alpha", trn_lora.alpha)->capture_default_str();
  trn->add_option("--lora-dropout", trn_lora.dropout)->capture_default_str();
  trn->add_option("--lora-targets", trn_targets, "comma-separated projections (default: all seven)");
  trn->add_flag("--no-lora", trn_no_lora, "train the adapter alone")->capture_default_str();
  train_options(trn, trn_cfg);
  trn->add_option("--out-dir", trn_out)->capture_default_str();

  // generate
  auto* gen = app.add_subcommand("generate", "sample trait-conditioned text");
  std::string gen_base, gen_adapter, gen_prompt, gen_circ, gen_out = "out";
  std::vector<std::string> gen_traits;
  double gen_alpha = kCircumplexAlphaDeg;
  std::size_t gen_n = 5;
  SamplingConfig gen_sampling;
  gen->add_option("--base", gen_base, "base model file");
  gen->add_option("--adapter", gen_adapter, "adapter file (omit for unconditioned text)");
  gen->add_option("--trait", gen_traits, "name=k, repeatable");
  gen->add_option("--circumplex", gen_circ, "warmth,dominance");
  gen->add_option("--alpha", gen_alpha, "circumplex rotation in degrees")->capture_default_str();
  gen->add_option("--prompt", gen_prompt);
  gen->add_option("--n", gen_n, "samples")->capture_default_str();
  gen->add_option("--seed", gen_sampling.seed, "sample i uses seed + i")->capture_default_str();
  gen->add_option("--temperature", gen_sampling.temperature, "0 = greedy")->capture_default_str();
  gen->add_option("--top-k", gen_sampling.top_k)->capture_default_str();
  gen->add_option("--max-new-tokens", gen_sampling.max_new_tokens)->capture_default_str();
  gen->add_option("--out-dir", gen_out)->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "blind level-matching evaluation");
  std::string ev_base, ev_adapter, ev_scoring, ev_scheme = "three", ev_judge_cfg, ev_template,
                                               ev_weighting = "linear", ev_out = "out";
  std::vector<std::string> ev_judges = {"oracle"};
  std::vector<std::string> ev_dims;
  std::size_t ev_trials = 10, ev_group = 0;
  std::uint64_t ev_seed = 0, ev_judge_seed = 0;
  SamplingConfig ev_sampling;
  ev->add_option("--base", ev_base, "base model file");
  ev->add_option("--adapter", ev_adapter, "adapter file");
  ev->add_option("--scoring", ev_scoring, "PSYSCOR1 file (oracle judge)");
  ev->add_option("--scheme", ev_scheme, "three | five")->capture_default_str();
  ev->add_option("--judge", ev_judges, "oracle | remote | random, repeatable")->capture_default_str();
  ev->add_option("--dimension", ev_dims, "trait names to evaluate (default: all)");
  ev->add_option("--trials", ev_trials, "trials per dimension")->capture_default_str();
  ev->add_option("--group-size", ev_group, "samples per group (0: scheme default)")->capture_default_str();
  ev->add_option("--seed", ev_seed, "generation and shuffle seed")->capture_default_str();
  ev->add_option("--judge-seed", ev_judge_seed, "random judge seed")->capture_default_str();
  ev->add_option("--judge-config", ev_judge_cfg, "JSON endpoint config (remote judge)");
  ev->add_option("--template", ev_template, "prompt template with {{levels}}, {{group_k}}");
  ev->add_option("--kappa", ev_weighting, "linear | quadratic")->capture_default_str();
  ev->add_option("--temperature", ev_sampling.temperature)->capture_default_str();
  ev->add_option("--top-k", ev_sampling.top_k)->capture_default_str();
  ev->add_option("--max-new-tokens", ev_sampling.max_new_tokens)->capture_default_str();
  ev->add_option("--out-dir", ev_out)->capture_default_str();

  // params
  auto* par = app.add_subcommand("params", "adapter / LoRA parameter accounting");
  std::string par_model = "gemma2b-like", par_coverage = "all";
  AdapterConfig par_adapter;
  bool par_lora = false, par_json = false;
  LoraConfig par_lora_cfg;
  par->add_option("--model", par_model, "preset: " + [] {
    std::string s;
    for (const auto& n : preset_names()) s += (s.empty() ? "" : ", ") + n;
    return s;
  }())->capture_default_str();
  par->add_option("--latent", par_adapter.latent_size, "trait dimensions")->capture_default_str();
  par->add_flag("--bias,!--no-bias", par_adapter.use_bias)->capture_default_str();
  par->add_option("--coverage", par_coverage, "all | all_but_last")->capture_default_str();
  par->add_flag("--lora", par_lora, "include LoRA and the trainable fraction")->capture_default_str();
  par->add_option("--lora-r", par_lora_cfg.r)->capture_default_str();
  par->add_flag("--json", par_json, "print JSON instead of the table")->capture_default_str();

  // circumplex
  auto* circ = app.add_subcommand("circumplex", "warmth/dominance <-> extraversion/agreeableness");
  double c_w = 0, c_d = 0, c_alpha = kCircumplexAlphaDeg, c_e = 0, c_a = 0;
  bool c_inverse = false;
  std::string c_octant;
  circ->add_option("--warmth", c_w)->capture_default_str();
  circ->add_option("--dominance", c_d)->capture_default_str();
  circ->add_option("--alpha", c_alpha, "degrees")->capture_default_str();
  circ->add_option("--octant", c_octant, "segment label at radius 3");
  circ->add_flag("--inverse", c_inverse, "map --ext/--agr back to the circumplex");
  circ->add_option("--ext", c_e)->capture_default_str();
  circ->add_option("--agr", c_a)->capture_default_str();

  for (auto* sub : app.get_subcommands({})) sub->allow_config_extras(CLI::config_extras_mode::error);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInputFailure;
  }

  try {
    Output out;
    if (*synth) {
      SynthSpec spec = default_synth_spec(synth_dims);
      spec.mixing_strength = synth_mixing;
      spec.marker_density = synth_density;
      spec.messages_per_author = synth_per_author;
      spec.validation_fraction = synth_val;
      out.open(synth_out, *synth);
      auto records = generate_synthetic_corpus(spec, synth_n, synth_seed);
      save_corpus(out / "corpus.jsonl", records);
      std::size_t val = 0;
      for (const auto& r : records) val += r.split == Split::validation;
      out.report("synth_report.json", {{"records", records.size()},
                                       {"train", records.size() - val},
                                       {"validation", val},
                                       {"dimensions", spec.dimensions},
                                       {"high", spec.high},
                                       {"low", spec.low}});
      std::cout << records.size() << " records (" << val << " validation) -> "
                << (out / "corpus.jsonl").string() << "\n";
    } else if (*prep) {
      require_file(prep_in, "input");
      out.open(prep_out, *prep);
      std::ifstream f(prep_in, std::ios::binary);
      std::vector<CorpusRecord> kept;
      json rejections = json::array();
      std::map<std::string, std::size_t> counts;
      std::size_t line_no = 0;
      for (std::string line; std::getline(f, line);) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        RawMessage raw;
        try {
          auto j = json::parse(line);
          raw.text = j.at("text").get<std::string>();
          raw.source = parse_source_kind(j.value("source", std::string("tweet")));
        } catch (const json::exception& e) {
          throw FormatError(FormatErrorKind::malformed_record,
                            prep_in + ":" + std::to_string(line_no) + ": " + e.what());
        }
        auto res = preprocess(raw);
        if (res.accepted()) {
          kept.push_back(*res.record);
        } else {
          ++counts[to_string(*res.rejection)];
          rejections.push_back({{"line", line_no}, {"reason", to_string(*res.rejection)}});
        }
      }
      save_corpus(out / "corpus.jsonl", kept);
      out.report("preprocess_report.json",
                 {{"accepted", kept.size()}, {"rejected", counts}, {"rejections", rejections}});
      std::cout << kept.size() << " accepted, " << rejections.size() << " rejected\n";
    } else if (*sfit) {
      require_file(sfit_corpus, "corpus");
      auto records = load_corpus(sfit_corpus);
      if (records.empty()) throw InputError("corpus is empty");
      std::vector<std::string> traits = split_list(sfit_traits);
      if (traits.empty()) {
        const auto& r = records.front();
        const std::size_t d = r.latent ? r.latent->size() : (r.scores ? r.scores->size() : 0);
        traits = default_synth_spec(d).dimensions;
      }
      out.open(sfit_out, *sfit);
      auto fitted = fit_scoring(records, traits, sfit_lambda);
      save_scoring(out / "scoring.bin", fitted.model, fitted.extractor);
      out.report("score_fit_report.json",
                 {{"traits", fitted.model.traits},
                  {"width", fitted.model.width},
                  {"lambda", fitted.model.lambda},
                  {"rank", fitted.model.report.rank},
                  {"rows", fitted.model.report.rows},
                  {"pseudo_inverse", fitted.model.report.pseudo_inverse},
                  {"mu", *fitted.model.mu},
                  {"sigma", *fitted.model.sigma}});
      std::cout << "scoring model over " << fitted.model.width << " features, "
                << fitted.model.report.rows << " participants -> "
                << (out / "scoring.bin").string() << "\n";
    } else if (*sapp) {
      require_file(sapp_scoring, "scoring model");
      require_file(sapp_corpus, "corpus");
      auto sc = load_scoring(sapp_scoring);
      auto records = load_corpus(sapp_corpus);
      out.open(sapp_out, *sapp);
      auto res = annotate_corpus(records, sc.model, sc.extractor);
      save_corpus(out / "annotated.jsonl", res.records);
      out.report("score_apply_report.json",
                 {{"records", res.records.size()}, {"dropped", res.dropped}, {"traits", sc.model.traits}});
      std::cout << res.records.size() << " annotated, " << res.dropped << " dropped\n";
    } else if (*pre) {
      require_file(pre_corpus, "corpus");
      auto records = load_corpus(pre_corpus);
      std::vector<std::string> texts;
      for (auto& r : records) {
        texts.push_back(r.text);
        r.scores = std::vector<double>{};
      }
      auto tok = Tokenizer::build(texts, pre_min_count);
      ModelConfig mc = preset(pre_model);
      if (tok.size() > mc.vocab_size) {
        throw InputError("vocabulary of " + std::to_string(tok.size()) + " exceeds model vocab " +
                         std::to_string(mc.vocab_size));
      }
      out.open(pre_out, *pre);
      auto model = init_model(mc, pre_model_seed);
      auto tr = make_examples(records, tok, pre_cfg.max_seq_len, Split::train);
      auto va = make_examples(records, tok, pre_cfg.max_seq_len, Split::validation);
      auto rep = pretrain_base(model, tr, va, pre_cfg,
                               [](const LossPoint& p) { progress_line("pretrain", p); });
      save_model(out / "base.bin", model, {{"tokenizer", tok}});
      out.report("pretrain_report.json", to_json(rep));
      std::cout << "validation loss " << rep.initial_validation_loss << " -> "
                << rep.final_validation_loss << "; base -> " << (out / "base.bin").string() << "\n";
    } else if (*trn) {
      auto ck = load_checkpoint(trn_base, "", false);
      require_file(trn_corpus, "corpus");
      auto records = load_corpus(trn_corpus);
      for (const auto& r : records)
        if (!r.scores) throw InputError("corpus has records without scores; run score-apply first");
      AdapterConfig ac;
      const auto traits = split_list(trn_traits);
      ac.latent_size = traits.size();
      ac.use_bias = trn_bias;
      ac.coverage = parse_coverage(trn_coverage);
      if (!trn_targets.empty()) {
        const auto t = split_list(trn_targets);
        trn_lora.target_modules = std::set<std::string>(t.begin(), t.end());
      }
      out.open(trn_out, *trn);
      auto adapter = init_adapter(ck.model.config, ac, TraitSpec::normalized(traits), trn_adapter_seed);
      std::optional<LoraWeights> lora;
      if (!trn_no_lora) lora = init_lora(ck.model.config, trn_lora, trn_lora_seed);
      auto tr = make_examples(records, ck.tokenizer, trn_cfg.max_seq_len, Split::train);
      auto va = make_examples(records, ck.tokenizer, trn_cfg.max_seq_len, Split::validation);
      auto rep = train(ck.model, adapter, lora ? &*lora : nullptr, tr, va, trn_cfg,
                       [](const LossPoint& p) { progress_line("train", p); });
      save_adapter(out / "adapter.bin", adapter, lora ? &*lora : nullptr);
      out.report("train_report.json", to_json(rep));
      std::cout << "validation loss " << rep.initial_validation_loss << " -> "
                << rep.final_validation_loss << "; " << grouped(rep.trainable_params)
                << " trainable parameters; adapter -> " << (out / "adapter.bin").string() << "\n";
    } else if (*gen) {
      auto ck = load_checkpoint(gen_base, gen_adapter, false);
      TraitVector psi;
      std::map<std::string, double> levels;
      if (ck.adapter) {
        for (const auto& t : gen_traits) {
          const auto eq = t.find('=');
          if (eq == std::string::npos) throw InputError("--trait expects name=k, got '" + t + "'");
          levels[t.substr(0, eq)] = std::stod(t.substr(eq + 1));
        }
        if (!gen_circ.empty()) {
          const auto wd = split_list(gen_circ);
          if (wd.size() != 2) throw InputError("--circumplex expects warmth,dominance");
          const auto ea = circumplex_to_traits(std::stod(wd[0]), std::stod(wd[1]), gen_alpha);
          levels["extraversion"] = ea.extraversion;
          levels["agreeableness"] = ea.agreeableness;
        }
        psi = build_vector(ck.adapter->traits, levels);
      } else if (!gen_traits.empty() || !gen_circ.empty()) {
        throw InputError("trait levels need --adapter");
      }
      out.open(gen_out, *gen);
      Generator g{&ck.model, ck.adapter ? &*ck.adapter : nullptr, ck.lora ? &*ck.lora : nullptr,
                  &ck.tokenizer};
      auto texts = generate_many(g, psi, gen_prompt, gen_sampling, gen_n);
      std::string lines;
      for (std::size_t i = 0; i < texts.size(); ++i) {
        lines += json({{"i", i}, {"seed", gen_sampling.seed + i}, {"text", texts[i]}}).dump() + "\n";
        std::cout << texts[i] << "\n";
      }
      write_text(out / "generations.jsonl", lines);
      out.report("generate_report.json", {{"psi", psi.values}, {"samples", texts.size()}});
    } else if (*ev) {
      if (ev_base.empty() || ev_adapter.empty()) {
        throw InputError("missing checkpoint: eval needs --base and --adapter from a trained run");
      }
      auto ck = load_checkpoint(ev_base, ev_adapter, true);
      LevelScheme scheme = parse_scheme(ev_scheme);
      scheme.trials = ev_trials;
      if (ev_group > 0) scheme.group_size = ev_group;
      const auto weighting = parse_weighting(ev_weighting);
      std::vector<std::string> dims = ev_dims.empty() ? ck.adapter->traits.names : ev_dims;
      for (const auto& d : dims) ck.adapter->traits.index_of(d);

      std::optional<LoadedScoring> scoring;
      std::vector<std::pair<std::string, Judge>> judges;
      std::vector<std::string> judge_names;
      for (const auto& name : ev_judges) {
        if (name == "oracle") {
          require_file(ev_scoring, "scoring model (oracle judge)");
          if (!scoring) scoring = load_scoring(ev_scoring);
        } else if (name == "remote") {
          require_file(ev_judge_cfg, "judge config");
          require_file(ev_template, "judge template");
        } else if (name != "random") {
          throw InputError("unknown judge '" + name + "'");
        }
      }
      out.open(ev_out, *ev);
      Generator g{&ck.model, &*ck.adapter, ck.lora ? &*ck.lora : nullptr, &ck.tokenizer};
      auto source = generator_source(g, ck.adapter->traits, ev_sampling);

      // Oracle judges are per dimension, so each dimension is evaluated on its own.
      json per_dim = json::object();
      std::string table;
      bool any_ok = false;
      for (const auto& dim : dims) {
        judges.clear();
        for (const auto& name : ev_judges) {
          if (name == "oracle") {
            judges.emplace_back(name, oracle_judge(scoring->model, scoring->extractor, dim));
          } else if (name == "random") {
            judges.emplace_back(name, random_judge(ev_judge_seed));
          } else {
            auto cfg = json::parse(read_text(ev_judge_cfg)).get<JudgeEndpointConfig>();
            judges.emplace_back(name, remote_judge(cfg, read_text(ev_template), [](const std::string& m) {
                                  std::cerr << m << "\n";
                                }));
          }
        }
        const std::size_t d = ck.adapter->traits.index_of(dim);
        TextSource dim_source = [&, d](std::size_t, double k, std::size_t n, std::uint64_t seed) {
          return source(d, k, n, seed);
        };
        try {
          auto rep = evaluate(dim_source, scheme, {dim}, judges, ev_seed, weighting);
          per_dim[dim] = to_json(rep);
          table += "== " + dim + " ==\n" + format_table(rep, scheme) + "\n";
          any_ok = true;
        } catch (const StateError& e) {
          per_dim[dim] = {{"error", e.what()}};
          table += "== " + dim + " ==\nno successful trials: " + e.what() + "\n\n";
        }
      }
      out.report("eval_report.json", {{"scheme", scheme.name}, {"dimensions", per_dim}});
      write_text(out / "eval_report.txt", table);
      std::cout << table;
      if (!any_ok) return kRuntimeFailure;
    } else if (*par) {
      const ModelConfig mc = preset(par_model);
      par_adapter.coverage = parse_coverage(par_coverage);
      par_adapter.validate();
      const auto adapter = adapter_param_count(mc, par_adapter);
      json j = {{"model", par_model},
                {"base_params", count_base_params(mc)},
                {"adapter_params", adapter}};
      if (par_lora) {
        j["lora_params"] = lora_param_count(mc, par_lora_cfg);
        j["trainable_params"] = trainable_census(mc, par_adapter, &par_lora_cfg);
        j["trainable_fraction"] = trainable_fraction(mc, par_adapter, &par_lora_cfg);
      }
      if (par_json) {
        std::cout << j.dump(2) << "\n";
      } else {
        std::cout << grouped(adapter) << "\n";
        std::cout << "  model " << par_model << ", base " << grouped(count_base_params(mc))
                  << ", d_psi " << par_adapter.latent_size << ", bias "
                  << (par_adapter.use_bias ? "on" : "off") << ", coverage "
                  << to_string(par_adapter.coverage) << "\n";
        if (par_lora) {
          std::cout << "  lora " << grouped(j["lora_params"].get<std::uint64_t>()) << ", trainable "
                    << grouped(j["trainable_params"].get<std::uint64_t>()) << " ("
                    << std::fixed << std::setprecision(4)
                    << 100.0 * j["trainable_fraction"].get<double>() << "% of base)\n";
        }
      }
    } else if (*circ) {
      std::cout << std::fixed << std::setprecision(6);
      if (c_inverse) {
        const auto c = traits_to_circumplex(c_e, c_a, c_alpha);
        std::cout << "warmth=" << c.warmth << " dominance=" << c.dominance << "\n";
      } else {
        if (!c_octant.empty()) {
          const auto p = octant_preset(c_octant);
          c_w = p.warmth;
          c_d = p.dominance;
        }
        const auto ea = circumplex_to_traits(c_w, c_d, c_alpha);
        std::cout << "ext=" << ea.extraversion << " agr=" << ea.agreeableness << "\n";
      }
    }
    return kOk;
  } catch (const JudgeError& e) {
    std::cerr << "error: judge: " << e.what() << "\n";
    return kRuntimeFailure;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == FormatErrorKind::malformed_record ? kInputFailure : kRuntimeFailure;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: bad number: " << e.what() << "\n";
    return kInputFailure;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputFailure;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInputFailure;
  }
}
