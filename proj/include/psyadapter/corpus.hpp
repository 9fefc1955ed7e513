// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psyadapter/scoring.hpp"

namespace psyadapter {

enum class SourceKind { tweet, blog, synthetic };
SourceKind parse_source_kind(const std::string& s);
const char* to_string(SourceKind k);

enum class Split { train, validation };
Split parse_split(const std::string& s);
const char* to_string(Split s);

struct RawMessage {
  std::string text;
  SourceKind source = SourceKind::tweet;
};

struct CorpusRecord {
  std::string text;
  std::optional<std::vector<double>> scores;
  Split split = Split::train;
  /// Synthetic records only: the latent trait values and author that produced the text.
  std::optional<std::vector<double>> latent;
  std::optional<std::uint64_t> author;

  bool operator==(const CorpusRecord&) const = default;
};

enum class RejectReason { too_short, contains_link };
const char* to_string(RejectReason r);

struct PreprocessResult {
  std::optional<CorpusRecord> record;
  std::optional<RejectReason> rejection;

  bool accepted() const { return record.has_value(); }
};

inline constexpr std::size_t kMinWords = 5;
inline constexpr std::size_t kBlogWordTarget = 30;

/// Link check, emoji-code and hashtag stripping, blog truncation,
/// lowercasing and whitespace normalization, then the five-word minimum.
PreprocessResult preprocess(const RawMessage& raw);

/// Shortest prefix of whole sentences holding at least 30 words.
std::string truncate_blog(std::string_view text);

std::size_t word_count(std::string_view text);

struct SynthSpec {
  std::vector<std::string> dimensions;
  std::vector<std::vector<std::string>> high;  // per dimension
  std::vector<std::vector<std::string>> low;
  std::vector<std::string> neutral;
  std::size_t min_words = 12;
  std::size_t max_words = 20;
  /// Slope of the logistic that maps a latent value to P(high | marker slot).
  double mixing_strength = 2.0;
  /// Probability that a word slot draws from some dimension's lexicons.
  double marker_density = 0.9;
  std::size_t messages_per_author = 10;
  double validation_fraction = 0.1;

  /// Lexicons disjoint and non-empty, ranges sane. Throws ConfigError.
  void validate() const;
};

/// Two dimensions, 16-word high/low lexicons each and 132 neutral words:
/// 196 distinct words, which with four specials fills a 200-id vocabulary.
SynthSpec default_synth_spec(std::size_t dimensions = 2);

/// Authors draw psi ~ N(0, I); each of their messages shares it. Deterministic in (spec, n, seed).
std::vector<CorpusRecord> generate_synthetic_corpus(const SynthSpec& spec, std::size_t n,
                                                    std::uint64_t seed);

/// Per-author concatenated text and mean latent, in author order.
struct Participant {
  std::uint64_t author = 0;
  std::string text;
  std::vector<double> latent;
};
std::vector<Participant> participants(std::span<const CorpusRecord> records);

/// Fraction of the words of `text` found in `lexicon`.
double lexicon_rate(std::string_view text, std::span<const std::string> lexicon);

struct AnnotateResult {
  std::vector<CorpusRecord> records;
  std::size_t dropped = 0;
};
/// scores = normalize_scores(score_message(text)); unscorable records dropped.
AnnotateResult annotate_corpus(std::span<const CorpusRecord> records, const ScoringModel& model,
                               const FeatureExtractor& extractor);

/// One JSON object per line: text, scores (array or null), split, and for
/// synthetic records latent and author.
void save_corpus(const std::filesystem::path& path, std::span<const CorpusRecord> records);
std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path);

}  // namespace psyadapter
