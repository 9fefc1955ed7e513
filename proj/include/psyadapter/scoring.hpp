// SPDX-License-Identifier: Apache-2.0
//
// Language-based assessment: per-trait linear models fitted on
// participant-level word (or topic) frequencies, applied to single messages.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace psyadapter {

/// Lowercase, split on anything that is not an ASCII letter or digit.
std::vector<std::string> scoring_tokens(std::string_view text);

class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  explicit FeatureExtractor(std::vector<std::string> vocabulary);
  /// topics is vocab × n_topics row-major with nonnegative loadings.
  FeatureExtractor(std::vector<std::string> vocabulary, std::vector<double> topics,
                   std::size_t n_topics);

  const std::vector<std::string>& vocabulary() const { return vocab_; }
  bool has_topics() const { return n_topics_ > 0; }
  std::size_t n_topics() const { return n_topics_; }
  const std::vector<double>& topics() const { return topics_; }
  /// Feature width: vocabulary size, or topic count when topics are present.
  std::size_t width() const { return has_topics() ? n_topics_ : vocab_.size(); }

  /// Relative in-vocabulary frequencies, projected through the topics when
  /// present. Throws EmptyFeatureError when no token is in the vocabulary.
  std::vector<double> features(std::string_view text) const;

 private:
  void index();

  std::vector<std::string> vocab_;
  std::vector<double> topics_;
  std::size_t n_topics_ = 0;
  std::unordered_map<std::string, std::size_t> ids_;
};

/// Words seen at least `min_count` times, sorted.
std::vector<std::string> build_scoring_vocabulary(std::span<const std::string> texts,
                                                  std::size_t min_count = 1);

struct FitReport {
  bool pseudo_inverse = false;  // lambda = 0 and X^T X singular
  std::size_t rank = 0;
  std::size_t rows = 0;
};

struct ScoringModel {
  std::vector<std::string> traits;
  std::size_t width = 0;
  /// traits.size() rows of `width` weights, row-major.
  std::vector<double> weights;
  double lambda = 1e-3;
  /// Message-level normalization statistics (set by calibrate()).
  std::optional<std::vector<double>> mu;
  std::optional<std::vector<double>> sigma;
  FitReport report;

  std::vector<double> apply(std::span<const double> features) const;
};

/// Rows of X are participants; Psi rows hold their trait scores.
/// W_j = (X^T X + lambda I)^-1 X^T psi_j, pseudo-inverse when singular at lambda 0.
ScoringModel fit_scoring_model(const std::vector<std::vector<double>>& X,
                               const std::vector<std::vector<double>>& Psi, double lambda,
                               std::vector<std::string> traits);

std::vector<double> score_message(const ScoringModel& model, const FeatureExtractor& extractor,
                                  std::string_view text);

/// Records mean and population std of message-level scores over `texts`.
/// Messages without in-vocabulary tokens are skipped; returns how many were used.
std::size_t calibrate(ScoringModel& model, const FeatureExtractor& extractor,
                      std::span<const std::string> texts);

std::vector<double> normalize_scores(std::span<const double> scores, const ScoringModel& model);

inline constexpr const char* kScoringMagic = "PSYSCOR1";
inline constexpr const char* kTopicMagic = "PSYTOPC1";

void save_scoring(const std::filesystem::path& path, const ScoringModel& model,
                  const FeatureExtractor& extractor);

struct LoadedScoring {
  ScoringModel model;
  FeatureExtractor extractor;
};
LoadedScoring load_scoring(const std::filesystem::path& path);

void save_topics(const std::filesystem::path& path, const FeatureExtractor& extractor);
FeatureExtractor load_topics(const std::filesystem::path& path);

}  // namespace psyadapter
