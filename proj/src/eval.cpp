// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <memory>
#include <numeric>
#include <random>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>

namespace psyadapter {
namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix(a ^ splitmix(b)); }

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) {
    s.replace(pos, from.size(), to);
  }
}

}  // namespace

void LevelScheme::validate() const {
  if (levels.empty()) throw ConfigError("level scheme has no levels");
  if (labels.size() != levels.size()) throw ConfigError("level scheme needs one label per level");
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (!(levels[i] > levels[i - 1])) throw ConfigError("levels must be strictly increasing");
  }
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = i + 1; j < labels.size(); ++j)
      if (lower(labels[i]) == lower(labels[j])) throw ConfigError("duplicate level label " + labels[i]);
  if (group_size < 1) throw ConfigError("group size must be >= 1");
  if (trials < 1) throw ConfigError("trials must be >= 1");
}

std::optional<std::size_t> LevelScheme::label_index(const std::string& label) const {
  const std::string key = lower(trim(label));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (lower(labels[i]) == key) return i;
  return std::nullopt;
}

LevelScheme LevelScheme::three() { return {"three", {-3.0, 0.0, 3.0}, {"Low", "Neutral", "High"}, 5, 10}; }

LevelScheme LevelScheme::five() {
  return {"five",
          {-3.0, -1.5, 0.0, 1.5, 3.0},
          {"Very Low", "Low", "Neutral", "High", "Very High"},
          10,
          10};
}

LevelScheme parse_scheme(const std::string& name) {
  if (name == "three") return LevelScheme::three();
  if (name == "five") return LevelScheme::five();
  throw ConfigError("unknown level scheme '" + name + "' (expected three or five)");
}

const char* to_string(JudgeFailureKind k) {
  switch (k) {
    case JudgeFailureKind::network: return "network";
    case JudgeFailureKind::unparseable: return "unparseable";
    case JudgeFailureKind::label_count: return "label_count";
    case JudgeFailureKind::invalid_label: return "invalid_label";
    case JudgeFailureKind::unscorable: return "unscorable";
  }
  return "?";
}

TextSource generator_source(const Generator& gen, const TraitSpec& traits,
                            const SamplingConfig& sampling) {
  return [gen, traits, sampling](std::size_t dimension, double k, std::size_t n,
                                 std::uint64_t seed) {
    if (dimension >= traits.size()) throw IndexError("dimension outside trait spec");
    SamplingConfig s = sampling;
    s.seed = seed;
    const TraitVector psi = build_vector(traits, {{traits.names[dimension], k}});
    return generate_many(gen, psi, "", s, n);
  };
}

Trial make_trial(const TextSource& source, const LevelScheme& scheme, std::size_t dimension,
                 std::uint64_t seed) {
  scheme.validate();
  Trial t;
  t.dimension = dimension;
  t.seed = seed;
  std::vector<std::size_t> order(scheme.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix(seed, 0x5348));
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t level : order) {
    t.groups.push_back(source(dimension, scheme.levels[level], scheme.group_size, mix(seed, level + 1)));
    t.truth.push_back(level);
  }
  return t;
}

void judge_trial(Trial& trial, const LevelScheme& scheme, const std::string& dimension_name,
                 const Judge& judge) {
  trial.assigned.clear();
  trial.failure.reset();
  trial.failure_message.clear();
  try {
    const auto labels = judge({dimension_name, scheme.labels, trial.groups});
    if (labels.size() != trial.groups.size()) {
      throw JudgeError(JudgeFailureKind::label_count,
                       std::to_string(labels.size()) + " labels for " +
                           std::to_string(trial.groups.size()) + " groups");
    }
    for (const auto& l : labels) {
      auto idx = scheme.label_index(l);
      if (!idx) throw JudgeError(JudgeFailureKind::invalid_label, "unknown label '" + l + "'");
      trial.assigned.push_back(*idx);
    }
  } catch (const JudgeError& e) {
    trial.assigned.clear();
    trial.failure = e.kind();
    trial.failure_message = e.what();
  }
}

Trial run_trial(const TextSource& source, const LevelScheme& scheme, std::size_t dimension,
                const std::string& dimension_name, const Judge& judge, std::uint64_t seed) {
  Trial t = make_trial(source, scheme, dimension, seed);
  judge_trial(t, scheme, dimension_name, judge);
  return t;
}

double partial_credit(std::span<const std::size_t> truth, std::span<const std::size_t> assigned) {
  if (truth.size() != assigned.size()) {
    throw InputError("partial credit: " + std::to_string(truth.size()) + " truths vs " +
                     std::to_string(assigned.size()) + " assignments");
  }
  if (truth.empty()) throw InputError("partial credit: no groups");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == assigned[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

EvalReport aggregate(std::span<const Trial> trials, const LevelScheme& scheme) {
  const std::size_t L = scheme.size();
  EvalReport r;
  r.scheme = scheme.name;
  r.levels = scheme.levels;
  r.trials = trials.size();
  r.per_level_accuracy.assign(L, 0.0);
  r.confusion.assign(L, std::vector<std::size_t>(L, 0));
  for (const auto& t : trials) {
    r.seeds.push_back(t.seed);
    if (!t.ok()) {
      ++r.failed;
      ++r.failures[to_string(*t.failure)];
      continue;
    }
    r.trial_credit.push_back(partial_credit(t.truth, t.assigned));
    for (std::size_t g = 0; g < t.truth.size(); ++g) {
      if (t.truth[g] >= L || t.assigned[g] >= L) throw IndexError("trial label outside scheme");
      ++r.confusion[t.truth[g]][t.assigned[g]];
      if (t.truth[g] == t.assigned[g]) r.per_level_accuracy[t.truth[g]] += 1.0;
    }
  }
  const std::size_t ok = r.trial_credit.size();
  if (ok == 0) throw StateError("aggregate: no successful trials");
  r.overall = std::accumulate(r.trial_credit.begin(), r.trial_credit.end(), 0.0) /
              static_cast<double>(ok);
  for (auto& a : r.per_level_accuracy) a /= static_cast<double>(ok);
  return r;
}

KappaWeighting parse_weighting(const std::string& s) {
  if (s == "linear") return KappaWeighting::linear;
  if (s == "quadratic") return KappaWeighting::quadratic;
  throw ConfigError("unknown kappa weighting '" + s + "'");
}

double weighted_kappa(std::span<const std::size_t> a, std::span<const std::size_t> b,
                      std::size_t levels, KappaWeighting weighting) {
  if (a.size() != b.size()) throw InputError("kappa: raters labeled different item counts");
  if (a.empty()) throw InputError("kappa: no items");
  if (levels < 1) throw InputError("kappa: no levels");
  const double n = static_cast<double>(a.size());
  std::vector<double> O(levels * levels, 0.0), ra(levels, 0.0), rb(levels, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] >= levels || b[i] >= levels) throw IndexError("kappa: label outside levels");
    O[a[i] * levels + b[i]] += 1.0 / n;
    ra[a[i]] += 1.0 / n;
    rb[b[i]] += 1.0 / n;
  }
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < levels; ++i) {
    for (std::size_t j = 0; j < levels; ++j) {
      double w = levels == 1 ? 0.0
                             : std::abs(static_cast<double>(i) - static_cast<double>(j)) /
                                   static_cast<double>(levels - 1);
      if (weighting == KappaWeighting::quadratic) w *= w;
      num += w * O[i * levels + j];
      den += w * ra[i] * rb[j];
    }
  }
  if (den <= 1e-15) throw NumericError("kappa undefined: chance-expected disagreement is zero");
  return 1.0 - num / den;
}

Judge oracle_judge(const ScoringModel& model, const FeatureExtractor& extractor,
                   const std::string& dimension) {
  const auto it = std::find(model.traits.begin(), model.traits.end(), dimension);
  if (it == model.traits.end()) throw ConfigError("oracle judge: scoring model has no '" + dimension + "'");
  const auto d = static_cast<std::size_t>(it - model.traits.begin());
  return [model, extractor, d](const JudgeRequest& req) {
    if (req.groups.size() != req.labels.size()) {
      throw JudgeError(JudgeFailureKind::label_count, "oracle judge needs one group per level");
    }
    std::vector<double> mean(req.groups.size());
    for (std::size_t g = 0; g < req.groups.size(); ++g) {
      double sum = 0.0;
      std::size_t n = 0;
      for (const auto& text : req.groups[g]) {
        try {
          sum += score_message(model, extractor, text)[d];
          ++n;
        } catch (const EmptyFeatureError&) {
        }
      }
      if (n == 0) throw JudgeError(JudgeFailureKind::unscorable, "group " + std::to_string(g + 1));
      mean[g] = sum / static_cast<double>(n);
    }
    std::vector<std::size_t> order(mean.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return mean[x] < mean[y]; });
    std::vector<std::string> out(mean.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) out[order[rank]] = req.labels[rank];
    return out;
  };
}

Judge random_judge(std::uint64_t seed) {
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return [rng](const JudgeRequest& req) {
    std::uniform_int_distribution<std::size_t> pick(0, req.labels.size() - 1);
    std::vector<std::string> out;
    for (std::size_t g = 0; g < req.groups.size(); ++g) out.push_back(req.labels[pick(*rng)]);
    return out;
  };
}

void JudgeEndpointConfig::validate() const {
  static const std::regex url_re(R"(^https?://[^/\s]+(/\S*)?$)", std::regex::icase);
  if (!std::regex_match(url, url_re)) throw ConfigError("judge endpoint: bad url '" + url + "'");
  if (!(timeout_seconds > 0.0)) throw ConfigError("judge endpoint: timeout must be > 0");
  if (!(backoff_seconds >= 0.0)) throw ConfigError("judge endpoint: backoff must be >= 0");
}

void to_json(nlohmann::json& j, const JudgeEndpointConfig& c) {
  j = {{"url", c.url},
       {"credential_env", c.credential_env},
       {"model", c.model},
       {"timeout_seconds", c.timeout_seconds},
       {"max_retries", c.max_retries},
       {"backoff_seconds", c.backoff_seconds}};
}

void from_json(const nlohmann::json& j, JudgeEndpointConfig& c) {
  static const std::vector<std::string> keys = {"url",             "credential_env", "model",
                                                "timeout_seconds", "max_retries",    "backoff_seconds"};
  for (const auto& [k, v] : j.items()) {
    if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
      throw ConfigError("judge endpoint: unknown key '" + k + "'");
    }
  }
  c = JudgeEndpointConfig{};
  c.url = j.at("url").get<std::string>();
  c.credential_env = j.value("credential_env", c.credential_env);
  c.model = j.value("model", c.model);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.backoff_seconds = j.value("backoff_seconds", c.backoff_seconds);
}

std::string render_judge_prompt(const std::string& tmpl, const JudgeRequest& request) {
  std::string out = tmpl;
  if (out.find("{{levels}}") == std::string::npos) {
    throw ConfigError("judge template lacks {{levels}}");
  }
  std::string levels;
  for (const auto& l : request.labels) levels += (levels.empty() ? "" : ", ") + l;
  replace_all(out, "{{levels}}", levels);
  for (std::size_t g = 0; g < request.groups.size(); ++g) {
    const std::string key = "{{group_" + std::to_string(g + 1) + "}}";
    if (out.find(key) == std::string::npos) throw ConfigError("judge template lacks " + key);
    std::string body;
    for (const auto& t : request.groups[g]) body += "- " + t + "\n";
    replace_all(out, key, body);
  }
  return out;
}

Judge remote_judge(const JudgeEndpointConfig& endpoint, std::string tmpl, LogFn log) {
  endpoint.validate();
  std::string token;
  if (!endpoint.credential_env.empty()) {
    const char* v = std::getenv(endpoint.credential_env.c_str());
    if (v == nullptr || *v == '\0') {
      throw ConfigError("judge endpoint: environment variable " + endpoint.credential_env + " is not set");
    }
    token = v;
  }
  static const std::regex split_re(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
  std::smatch m;
  std::regex_match(endpoint.url, m, split_re);
  const std::string base = m[1].str();
  const std::string path = m[2].matched ? m[2].str() : "/";

  return [endpoint, tmpl = std::move(tmpl), log, token, base, path](const JudgeRequest& req) {
    nlohmann::json body = {{"model", endpoint.model},
                           {"prompt", render_judge_prompt(tmpl, req)},
                           {"labels", req.labels},
                           {"groups", req.groups}};
    const std::string payload = body.dump();
    httplib::Headers headers;
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);

    const auto timeout = std::chrono::duration<double>(endpoint.timeout_seconds);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
    double wait = endpoint.backoff_seconds;
    std::string last_error;
    for (std::size_t attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
      if (attempt > 0) {
        if (log) log("remote judge: retry " + std::to_string(attempt) + " after " + last_error);
        std::this_thread::sleep_for(std::chrono::duration<double>(wait));
        wait *= 2.0;
      }
      httplib::Client client(base);
      client.set_connection_timeout(secs.count(), usecs.count());
      client.set_read_timeout(secs.count(), usecs.count());
      client.set_write_timeout(secs.count(), usecs.count());
      auto res = client.Post(path, headers, payload, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200) {
        throw JudgeError(JudgeFailureKind::network, "HTTP " + std::to_string(res->status));
      }
      nlohmann::json reply;
      try {
        reply = nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        throw JudgeError(JudgeFailureKind::unparseable, e.what());
      }
      if (!reply.is_object() || !reply.contains("labels") || !reply["labels"].is_array()) {
        throw JudgeError(JudgeFailureKind::unparseable, "response has no \"labels\" array");
      }
      std::vector<std::string> labels;
      for (const auto& l : reply["labels"]) {
        if (!l.is_string()) throw JudgeError(JudgeFailureKind::unparseable, "non-string label");
        labels.push_back(l.get<std::string>());
      }
      if (labels.size() != req.groups.size()) {
        throw JudgeError(JudgeFailureKind::label_count,
                         std::to_string(labels.size()) + " labels for " +
                             std::to_string(req.groups.size()) + " groups");
      }
      if (log) log("remote judge: ok after " + std::to_string(attempt) + " retries");
      return labels;
    }
    throw JudgeError(JudgeFailureKind::network, last_error + " after " +
                                                    std::to_string(endpoint.max_retries) + " retries");
  };
}

MultiJudgeReport evaluate(const TextSource& source, const LevelScheme& scheme,
                          const std::vector<std::string>& dimension_names,
                          const std::vector<std::pair<std::string, Judge>>& judges,
                          std::uint64_t seed, KappaWeighting weighting) {
  scheme.validate();
  if (judges.empty()) throw ConfigError("evaluate: no judges");
  if (dimension_names.empty()) throw ConfigError("evaluate: no dimensions");
  std::vector<Trial> base;
  for (std::size_t d = 0; d < dimension_names.size(); ++d)
    for (std::size_t t = 0; t < scheme.trials; ++t)
      base.push_back(make_trial(source, scheme, d, mix(mix(seed, d), t)));

  MultiJudgeReport out;
  for (const auto& [name, judge] : judges) {
    JudgedRun run{name, base, {}};
    for (auto& t : run.trials) judge_trial(t, scheme, dimension_names[t.dimension], judge);
    run.report = aggregate(run.trials, scheme);
    out.runs.push_back(std::move(run));
  }
  const double nj = static_cast<double>(out.runs.size());
  out.per_level_accuracy.assign(scheme.size(), 0.0);
  for (const auto& r : out.runs) {
    out.overall += r.report.overall / nj;
    for (std::size_t l = 0; l < scheme.size(); ++l) out.per_level_accuracy[l] += r.report.per_level_accuracy[l] / nj;
  }
  for (std::size_t i = 0; i < out.runs.size(); ++i) {
    for (std::size_t j = i + 1; j < out.runs.size(); ++j) {
      std::vector<std::size_t> a, b;
      for (std::size_t t = 0; t < base.size(); ++t) {
        const auto& ta = out.runs[i].trials[t];
        const auto& tb = out.runs[j].trials[t];
        if (!ta.ok() || !tb.ok()) continue;
        a.insert(a.end(), ta.assigned.begin(), ta.assigned.end());
        b.insert(b.end(), tb.assigned.begin(), tb.assigned.end());
      }
      KappaEntry e{out.runs[i].judge, out.runs[j].judge, std::nullopt, a.size()};
      try {
        if (!a.empty()) e.kappa = weighted_kappa(a, b, scheme.size(), weighting);
      } catch (const NumericError&) {
      }
      out.kappa.push_back(e);
    }
  }
  return out;
}

nlohmann::json to_json(const Trial& t) {
  nlohmann::json j = {{"dimension", t.dimension}, {"seed", t.seed}, {"truth", t.truth},
                      {"assigned", t.assigned},   {"groups", t.groups}};
  if (t.failure) {
    j["failure"] = to_string(*t.failure);
    j["failure_message"] = t.failure_message;
  }
  return j;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json failures = nlohmann::json::object();
  for (const auto& [k, v] : r.failures) failures[k] = v;
  return {{"scheme", r.scheme},
          {"levels", r.levels},
          {"trials", r.trials},
          {"failed", r.failed},
          {"failures", failures},
          {"overall", r.overall},
          {"per_level_accuracy", r.per_level_accuracy},
          {"confusion", r.confusion},
          {"trial_credit", r.trial_credit},
          {"seeds", r.seeds}};
}

nlohmann::json to_json(const MultiJudgeReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& run : r.runs) {
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& t : run.trials) trials.push_back(to_json(t));
    runs.push_back({{"judge", run.judge}, {"report", to_json(run.report)}, {"trials", trials}});
  }
  nlohmann::json kappa = nlohmann::json::array();
  for (const auto& k : r.kappa) {
    kappa.push_back({{"a", k.a},
                     {"b", k.b},
                     {"items", k.items},
                     {"kappa", k.kappa ? nlohmann::json(*k.kappa) : nlohmann::json(nullptr)}});
  }
  return {{"overall", r.overall},
          {"per_level_accuracy", r.per_level_accuracy},
          {"runs", runs},
          {"kappa", kappa}};
}

std::string format_table(const MultiJudgeReport& r, const LevelScheme& scheme) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  os << "scheme " << scheme.name << ", " << scheme.group_size << " samples per group\n";
  for (const auto& run : r.runs) {
    const auto& rep = run.report;
    os << "\njudge " << run.judge << ": " << rep.trials - rep.failed << "/" << rep.trials
       << " trials ok";
    for (const auto& [k, v] : rep.failures) os << ", " << k << " " << v;
    os << "\n  overall " << rep.overall << " (chance " << 1.0 / static_cast<double>(scheme.size())
       << ")\n";
    os << "  level        k   accuracy\n";
    for (std::size_t l = 0; l < scheme.size(); ++l) {
      os << "  " << std::left << std::setw(10) << scheme.labels[l] << std::right << std::setw(5)
         << std::setprecision(1) << scheme.levels[l] << std::setprecision(3) << std::setw(11)
         << rep.per_level_accuracy[l] << "\n";
    }
    os << "  confusion (rows truth, columns assigned)\n";
    for (std::size_t l = 0; l < scheme.size(); ++l) {
      os << "  " << std::left << std::setw(10) << scheme.labels[l] << std::right;
      for (auto c : rep.confusion[l]) os << std::setw(5) << c;
      os << "\n";
    }
  }
  if (r.runs.size() > 1) {
    os << "\nmean overall " << r.overall << "\n";
    for (const auto& k : r.kappa) {
      os << "kappa " << k.a << " vs " << k.b << ": ";
      if (k.kappa) os << *k.kappa; else os << "undefined";
      os << " over " << k.items << " groups\n";
    }
  }
  return os.str();
}

}  // namespace psyadapter
