// SPDX-License-Identifier: Apache-2.0
//
// Conditioning vectors: per-dimension levels in standard-deviation units,
// demographic combinations and interpersonal-circumplex rotation.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace psyadapter {

struct TraitSpec {
  std::vector<std::string> names;
  std::vector<double> mu;
  std::vector<double> sigma;

  std::size_t size() const { return names.size(); }
  /// Equal lengths, unique names, sigma > 0.
  void validate() const;
  std::size_t index_of(const std::string& name) const;

  /// Normalized spec (mu 0, sigma 1) over the given names.
  static TraitSpec normalized(std::vector<std::string> names);
  bool operator==(const TraitSpec&) const = default;
};

/// openness, conscientiousness, extraversion, agreeableness, neuroticism.
TraitSpec big_five();

struct TraitVector {
  std::vector<double> values;
};

/// value_i = mu_i + k_i * sigma_i for listed dimensions, mu_i elsewhere.
TraitVector build_vector(const TraitSpec& spec, const std::map<std::string, double>& levels);

struct Circumplex {
  double warmth = 0.0;
  double dominance = 0.0;
};

struct ExtAgr {
  double extraversion = 0.0;
  double agreeableness = 0.0;
};

constexpr double kCircumplexAlphaDeg = 22.5;

/// ext = cos(a) w - sin(a) d ; agr = sin(a) w + cos(a) d
ExtAgr circumplex_to_traits(double warmth, double dominance,
                            double alpha_deg = kCircumplexAlphaDeg);
Circumplex traits_to_circumplex(double extraversion, double agreeableness,
                                double alpha_deg = kCircumplexAlphaDeg);

/// The eight segment labels, counter-clockwise from Warm-Agreeable (0°).
const std::vector<std::string>& octant_labels();
/// Point on the radius-m circle for a segment label.
Circumplex octant_preset(const std::string& name, double magnitude = 3.0);

/// Big Five vector (0, 0, ext, agr, 0) for a circumplex position.
TraitVector circumplex_vector(const TraitSpec& big5, double warmth, double dominance,
                              double alpha_deg = kCircumplexAlphaDeg);

void to_json(nlohmann::json& j, const TraitSpec& s);
void from_json(const nlohmann::json& j, TraitSpec& s);

void save_trait_spec(const std::filesystem::path& path, const TraitSpec& spec);
TraitSpec load_trait_spec(const std::filesystem::path& path);

}  // namespace psyadapter
