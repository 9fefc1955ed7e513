// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/traits.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "psyadapter/errors.hpp"

namespace psyadapter {
namespace {

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

void check_alpha(double alpha_deg) {
  if (!(alpha_deg > 0.0 && alpha_deg < 90.0)) {
    throw ConfigError("circumplex angle must lie in (0, 90) degrees");
  }
}

}  // namespace

void TraitSpec::validate() const {
  if (names.empty()) throw ConfigError("trait spec has no dimensions");
  if (mu.size() != names.size() || sigma.size() != names.size()) {
    throw ConfigError("trait spec: names, mu and sigma lengths differ");
  }
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw ConfigError("trait spec: duplicate dimension '" + n + "'");
  }
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (!(sigma[i] > 0.0) || !std::isfinite(sigma[i]) || !std::isfinite(mu[i])) {
      throw ConfigError("trait spec: dimension '" + names[i] +
                        "' needs finite mu and sigma > 0");
    }
  }
}

std::size_t TraitSpec::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  throw ConfigError("unknown trait dimension '" + name + "'");
}

TraitSpec TraitSpec::normalized(std::vector<std::string> names) {
  TraitSpec s;
  s.mu.assign(names.size(), 0.0);
  s.sigma.assign(names.size(), 1.0);
  s.names = std::move(names);
  s.validate();
  return s;
}

TraitSpec big_five() {
  return TraitSpec::normalized(
      {"openness", "conscientiousness", "extraversion", "agreeableness", "neuroticism"});
}

TraitVector build_vector(const TraitSpec& spec, const std::map<std::string, double>& levels) {
  spec.validate();
  TraitVector v{spec.mu};
  for (const auto& [name, k] : levels) {
    if (!std::isfinite(k)) throw ConfigError("level for '" + name + "' is not finite");
    const std::size_t i = spec.index_of(name);
    v.values[i] = spec.mu[i] + k * spec.sigma[i];
  }
  return v;
}

ExtAgr circumplex_to_traits(double warmth, double dominance, double alpha_deg) {
  check_alpha(alpha_deg);
  const double a = radians(alpha_deg);
  return {std::cos(a) * warmth - std::sin(a) * dominance,
          std::sin(a) * warmth + std::cos(a) * dominance};
}

Circumplex traits_to_circumplex(double extraversion, double agreeableness, double alpha_deg) {
  check_alpha(alpha_deg);
  const double a = radians(alpha_deg);
  return {std::cos(a) * extraversion + std::sin(a) * agreeableness,
          -std::sin(a) * extraversion + std::cos(a) * agreeableness};
}

const std::vector<std::string>& octant_labels() {
  static const std::vector<std::string> labels = {
      "Warm-Agreeable",        "Gregarious-Extraverted", "Assured-Dominant",
      "Arrogant-Calculating",  "Cold-Hearted",           "Aloof-Introverted",
      "Unassured-Submissive",  "Unassuming-Ingenuous"};
  return labels;
}

Circumplex octant_preset(const std::string& name, double magnitude) {
  const auto& labels = octant_labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != name) continue;
    // Axis-aligned segments are exact; diagonals sit at m/sqrt(2) per axis.
    switch (i) {
      case 0: return {magnitude, 0.0};
      case 2: return {0.0, magnitude};
      case 4: return {-magnitude, 0.0};
      case 6: return {0.0, -magnitude};
      default: {
        const double h = magnitude / std::numbers::sqrt2;
        const double w = (i == 1 || i == 7) ? h : -h;
        const double d = (i == 1 || i == 3) ? h : -h;
        return {w, d};
      }
    }
  }
  throw ConfigError("unknown circumplex segment '" + name + "'");
}

TraitVector circumplex_vector(const TraitSpec& big5, double warmth, double dominance,
                              double alpha_deg) {
  const ExtAgr ea = circumplex_to_traits(warmth, dominance, alpha_deg);
  return build_vector(big5, {{"extraversion", ea.extraversion},
                             {"agreeableness", ea.agreeableness}});
}

void to_json(nlohmann::json& j, const TraitSpec& s) {
  j = nlohmann::json{{"names", s.names}, {"mu", s.mu}, {"sigma", s.sigma}};
}

void from_json(const nlohmann::json& j, TraitSpec& s) {
  j.at("names").get_to(s.names);
  j.at("mu").get_to(s.mu);
  j.at("sigma").get_to(s.sigma);
}

void save_trait_spec(const std::filesystem::path& path, const TraitSpec& spec) {
  spec.validate();
  std::ofstream out(path);
  if (!out) throw FormatError(FormatErrorKind::io, "cannot write '" + path.string() + "'");
  out << nlohmann::json(spec).dump(2) << "\n";
}

TraitSpec load_trait_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatErrorKind::io, "cannot open '" + path.string() + "'");
  TraitSpec spec;
  try {
    spec = nlohmann::json::parse(in).get<TraitSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::corrupt_header,
                      std::string("trait spec is malformed: ") + e.what());
  }
  spec.validate();
  return spec;
}

}  // namespace psyadapter
