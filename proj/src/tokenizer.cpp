// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "psyadapter/errors.hpp"

namespace psyadapter {
namespace {

const std::vector<std::string> kSpecialNames = {"[PAD]", "[UNK]", "[BOS]", "[EOS]"};

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

Tokenizer::Tokenizer(std::vector<std::string> words) : vocab_(kSpecialNames) {
  vocab_.insert(vocab_.end(), std::make_move_iterator(words.begin()),
                std::make_move_iterator(words.end()));
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (!ids_.emplace(vocab_[i], static_cast<int>(i)).second) {
      throw ConfigError("tokenizer: '" + vocab_[i] + "' listed twice");
    }
  }
}

Tokenizer Tokenizer::build(std::span<const std::string> texts, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& w : words_of(t)) ++counts[std::move(w)];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [w, n] : counts) {
    if (n >= min_count && std::find(kSpecialNames.begin(), kSpecialNames.end(), w) == kSpecialNames.end()) {
      kept.emplace_back(w, n);
    }
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  words.reserve(kept.size());
  for (auto& [w, n] : kept) words.push_back(std::move(w));
  return Tokenizer(std::move(words));
}

int Tokenizer::id(std::string_view word) const {
  auto it = ids_.find(std::string(word));
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Tokenizer::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(vocab_.size()));
  }
  return vocab_[static_cast<std::size_t>(id)];
}

std::vector<int> Tokenizer::encode(std::string_view text, bool bos, bool eos) const {
  std::vector<int> out;
  if (bos) out.push_back(kBos);
  for (const auto& w : words_of(text)) out.push_back(id(w));
  if (eos) out.push_back(kEos);
  return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    if (!out.empty()) out.push_back(' ');
    out += word(id);
  }
  return out;
}

void to_json(nlohmann::json& j, const Tokenizer& t) {
  j = std::vector<std::string>(t.vocabulary().begin() + Tokenizer::kSpecials, t.vocabulary().end());
}

void from_json(const nlohmann::json& j, Tokenizer& t) {
  t = Tokenizer(j.get<std::vector<std::string>>());
}

}  // namespace psyadapter
