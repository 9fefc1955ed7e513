// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace psyadapter {

/// Word-level vocabulary. Ids 0..3 are [PAD], [UNK], [BOS], [EOS].
class Tokenizer {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kSpecials = 4;

  Tokenizer() : Tokenizer(std::vector<std::string>{}) {}
  /// `words` excludes the specials; order fixes ids from 4 upward.
  explicit Tokenizer(std::vector<std::string> words);

  /// Words occurring at least `min_count` times, most frequent first
  /// (ties alphabetical).
  static Tokenizer build(std::span<const std::string> texts, std::size_t min_count = 2);

  std::size_t size() const { return vocab_.size(); }
  const std::vector<std::string>& vocabulary() const { return vocab_; }
  int id(std::string_view word) const;
  const std::string& word(int id) const;

  /// Whitespace split, lowercased; unknown words map to [UNK].
  std::vector<int> encode(std::string_view text, bool bos, bool eos) const;
  /// Joins words with single spaces, skipping [PAD], [BOS] and [EOS].
  std::string decode(std::span<const int> ids) const;

  bool operator==(const Tokenizer& o) const { return vocab_ == o.vocab_; }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
};

void to_json(nlohmann::json& j, const Tokenizer& t);
void from_json(const nlohmann::json& j, Tokenizer& t);

}  // namespace psyadapter
