// SPDX-License-Identifier: Apache-2.0
//
// Blind level matching: G generations per level are shown to a judge in
// shuffled group order and the judge names the level of each group.

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psyadapter/engine.hpp"
#include "psyadapter/errors.hpp"
#include "psyadapter/scoring.hpp"

namespace psyadapter {

struct LevelScheme {
  std::string name;
  std::vector<double> levels;       // k values, strictly increasing
  std::vector<std::string> labels;  // judge-facing names, one per level
  std::size_t group_size = 5;
  std::size_t trials = 10;

  std::size_t size() const { return levels.size(); }
  void validate() const;
  /// Case-insensitive label lookup; nullopt for unknown names.
  std::optional<std::size_t> label_index(const std::string& label) const;

  static LevelScheme three();  // (-3, 0, +3), G = 5
  static LevelScheme five();   // (-3, -1.5, 0, +1.5, +3), G = 10
};
LevelScheme parse_scheme(const std::string& name);

enum class JudgeFailureKind { network, unparseable, label_count, invalid_label, unscorable };
const char* to_string(JudgeFailureKind k);

class JudgeError : public Error {
 public:
  JudgeError(JudgeFailureKind kind, const std::string& what)
      : Error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  JudgeFailureKind kind() const noexcept { return kind_; }

 private:
  JudgeFailureKind kind_;
};

struct JudgeRequest {
  std::string dimension;
  std::vector<std::string> labels;               // scheme labels, low to high
  std::vector<std::vector<std::string>> groups;  // presentation order
};

/// Returns one label name per group; repeats are allowed. Throws JudgeError.
using Judge = std::function<std::vector<std::string>(const JudgeRequest&)>;

/// n texts for dimension `dimension` generated at level k.
using TextSource = std::function<std::vector<std::string>(
    std::size_t dimension, double k, std::size_t n, std::uint64_t seed)>;

/// Texts from a trained generator with build_vector(dimension, k).
TextSource generator_source(const Generator& gen, const TraitSpec& traits,
                            const SamplingConfig& sampling);

struct Trial {
  std::size_t dimension = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::string>> groups;  // presentation order
  std::vector<std::size_t> truth;                // level index of each presented group
  std::vector<std::size_t> assigned;             // judge's level index per group
  std::optional<JudgeFailureKind> failure;
  std::string failure_message;

  bool ok() const { return !failure.has_value(); }
};

/// Generation seeds derive from (seed, level); the group order from seed.
Trial make_trial(const TextSource& source, const LevelScheme& scheme, std::size_t dimension,
                 std::uint64_t seed);
/// Fills assigned, or marks the trial failed when the judge throws JudgeError
/// or answers with an unknown label.
void judge_trial(Trial& trial, const LevelScheme& scheme, const std::string& dimension_name,
                 const Judge& judge);
Trial run_trial(const TextSource& source, const LevelScheme& scheme, std::size_t dimension,
                const std::string& dimension_name, const Judge& judge, std::uint64_t seed);

/// Fraction of positions where assigned equals truth.
double partial_credit(std::span<const std::size_t> truth, std::span<const std::size_t> assigned);

struct EvalReport {
  std::string scheme;
  std::vector<double> levels;
  std::size_t trials = 0;
  std::size_t failed = 0;
  std::map<std::string, std::size_t> failures;  // by failure kind
  double overall = 0.0;
  std::vector<double> per_level_accuracy;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][assigned]
  std::vector<double> trial_credit;                 // successful trials, in order
  std::vector<std::uint64_t> seeds;
};

/// Throws StateError when no trial succeeded.
EvalReport aggregate(std::span<const Trial> trials, const LevelScheme& scheme);

enum class KappaWeighting { linear, quadratic };
KappaWeighting parse_weighting(const std::string& s);

/// kappa = 1 - sum(w O) / sum(w E) over labels 0..levels-1. Throws
/// NumericError when the denominator vanishes.
double weighted_kappa(std::span<const std::size_t> a, std::span<const std::size_t> b,
                      std::size_t levels, KappaWeighting weighting = KappaWeighting::linear);

/// Ranks groups by mean estimated score on `dimension`; ties go to the earlier group.
Judge oracle_judge(const ScoringModel& model, const FeatureExtractor& extractor,
                   const std::string& dimension);

/// Uniform labels with repeats.
Judge random_judge(std::uint64_t seed);

struct JudgeEndpointConfig {
  std::string url;  // http(s)://host[:port]/path
  std::string credential_env;
  std::string model;
  double timeout_seconds = 30.0;
  std::size_t max_retries = 3;
  double backoff_seconds = 0.5;  // doubles after each failed attempt

  void validate() const;
};
void to_json(nlohmann::json& j, const JudgeEndpointConfig& c);
void from_json(const nlohmann::json& j, JudgeEndpointConfig& c);

/// Substitutes {{levels}} and {{group_1}}..{{group_N}}; every placeholder
/// must be present.
std::string render_judge_prompt(const std::string& tmpl, const JudgeRequest& request);

using LogFn = std::function<void(const std::string&)>;

/// POSTs {"model", "prompt", "labels", "groups"} and expects {"labels": [...]}.
/// Network errors, timeouts, 429 and 5xx are retried with backoff.
Judge remote_judge(const JudgeEndpointConfig& endpoint, std::string tmpl, LogFn log = {});

struct JudgedRun {
  std::string judge;
  std::vector<Trial> trials;
  EvalReport report;
};

struct KappaEntry {
  std::string a;
  std::string b;
  std::optional<double> kappa;  // nullopt when undefined
  std::size_t items = 0;
};

/// The same trials judged by every judge: one report per judge, their
/// average, and pairwise kappa over groups both judges labeled.
struct MultiJudgeReport {
  std::vector<JudgedRun> runs;
  double overall = 0.0;
  std::vector<double> per_level_accuracy;
  std::vector<KappaEntry> kappa;
};
MultiJudgeReport evaluate(const TextSource& source, const LevelScheme& scheme,
                          const std::vector<std::string>& dimension_names,
                          const std::vector<std::pair<std::string, Judge>>& judges,
                          std::uint64_t seed, KappaWeighting weighting = KappaWeighting::linear);

nlohmann::json to_json(const Trial& t);
nlohmann::json to_json(const EvalReport& r);
nlohmann::json to_json(const MultiJudgeReport& r);
std::string format_table(const MultiJudgeReport& r, const LevelScheme& scheme);

}  // namespace psyadapter
