// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "psyadapter/errors.hpp"

namespace psyadapter {
namespace {

const std::regex& link_re() {
  static const std::regex re(R"((https?://|www\.)\S)", std::regex::icase);
  return re;
}

const std::regex& emoji_re() {
  static const std::regex re(R"(:\w+:)");
  return re;
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t start = i;
    while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

std::string strip_emoji_codes(std::string text) {
  for (;;) {
    std::string next = std::regex_replace(text, emoji_re(), " ");
    if (next == text) return text;
    text = std::move(next);
  }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

SourceKind parse_source_kind(const std::string& s) {
  if (s == "tweet") return SourceKind::tweet;
  if (s == "blog") return SourceKind::blog;
  if (s == "synthetic") return SourceKind::synthetic;
  throw ConfigError("unknown source kind '" + s + "' (tweet, blog, synthetic)");
}

const char* to_string(SourceKind k) {
  switch (k) {
    case SourceKind::tweet: return "tweet";
    case SourceKind::blog: return "blog";
    case SourceKind::synthetic: return "synthetic";
  }
  return "tweet";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  throw ConfigError("unknown split '" + s + "'");
}

const char* to_string(Split s) { return s == Split::train ? "train" : "validation"; }

const char* to_string(RejectReason r) {
  return r == RejectReason::too_short ? "too_short" : "contains_link";
}

std::size_t word_count(std::string_view text) { return split_ws(text).size(); }

std::string truncate_blog(std::string_view text) {
  std::size_t words = 0;
  std::size_t i = 0;
  bool in_word = false;
  while (i < text.size()) {
    const char c = text[i];
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
    if (c == '.' || c == '!' || c == '?') {
      std::size_t j = i;
      while (j + 1 < text.size() && (text[j + 1] == '.' || text[j + 1] == '!' || text[j + 1] == '?')) ++j;
      const bool boundary = j + 1 < text.size() && std::isspace(static_cast<unsigned char>(text[j + 1]));
      if (boundary && words >= kBlogWordTarget) return std::string(text.substr(0, j + 1));
      i = j + 1;
      continue;
    }
    ++i;
  }
  return std::string(text);
}

PreprocessResult preprocess(const RawMessage& raw) {
  PreprocessResult out;
  if (std::regex_search(raw.text, link_re())) {
    out.rejection = RejectReason::contains_link;
    return out;
  }
  std::string text = strip_emoji_codes(raw.text);
  std::string kept;
  for (auto tok : split_ws(text)) {
    if (tok.front() == '#') continue;
    if (!kept.empty()) kept.push_back(' ');
    kept.append(tok);
  }
  if (raw.source == SourceKind::blog) kept = truncate_blog(kept);
  std::transform(kept.begin(), kept.end(), kept.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (word_count(kept) < kMinWords) {
    out.rejection = RejectReason::too_short;
    return out;
  }
  out.record = CorpusRecord{};
  out.record->text = std::move(kept);
  return out;
}

void SynthSpec::validate() const {
  const std::size_t d = dimensions.size();
  if (d == 0) throw ConfigError("synthetic spec has no dimensions");
  if (high.size() != d || low.size() != d) {
    throw ConfigError("synthetic spec needs one high and one low lexicon per dimension");
  }
  if (neutral.empty()) throw ConfigError("synthetic spec has no neutral words");
  std::set<std::string> seen;
  auto add = [&](const std::vector<std::string>& words, const std::string& where) {
    if (words.empty()) throw ConfigError("synthetic spec: " + where + " lexicon is empty");
    for (const auto& w : words) {
      if (w.empty() || !std::all_of(w.begin(), w.end(), [](unsigned char c) {
            return std::isalnum(c) && !std::isupper(c);
          })) {
        throw ConfigError("synthetic spec: word '" + w + "' must be lowercase alphanumeric");
      }
      if (!seen.insert(w).second) {
        throw ConfigError("synthetic spec: '" + w + "' appears in more than one lexicon (" + where + ")");
      }
    }
  };
  for (std::size_t i = 0; i < d; ++i) {
    add(high[i], dimensions[i] + " high");
    add(low[i], dimensions[i] + " low");
  }
  add(neutral, "neutral");
  if (min_words < 1 || max_words < min_words) throw ConfigError("synthetic spec: bad length range");
  if (!(mixing_strength >= 0.0) || !std::isfinite(mixing_strength)) {
    throw ConfigError("synthetic spec: mixing strength must be >= 0");
  }
  if (!(marker_density >= 0.0 && marker_density <= 1.0)) {
    throw ConfigError("synthetic spec: marker density must lie in [0, 1]");
  }
  if (messages_per_author < 1) throw ConfigError("synthetic spec: messages per author must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("synthetic spec: validation fraction must lie in [0, 1)");
  }
}

SynthSpec default_synth_spec(std::size_t dimensions) {
  if (dimensions == 0) throw ConfigError("synthetic spec needs at least one dimension");
  SynthSpec s;
  static const std::vector<std::vector<std::string>> named_high = {
      {"party", "friends", "tonight", "excited", "dance", "crowd", "concert", "celebrate", "loud",
       "fun", "club", "weekend", "awesome", "yay", "hangout", "festival"},
      {"anxious", "worried", "hate", "stress", "afraid", "nervous", "upset", "cry", "awful",
       "panic", "lonely", "angry", "depressed", "scared", "sick", "ugh"}};
  static const std::vector<std::vector<std::string>> named_low = {
      {"quiet", "alone", "book", "home", "tired", "reading", "sleep", "silence", "anime",
       "computer", "rain", "tea", "nap", "introvert", "headphones", "blanket"},
      {"calm", "relaxed", "grateful", "peaceful", "fine", "steady", "content", "blessed",
       "thankful", "gentle", "rested", "easy", "sunny", "okay", "smile", "breathe"}};
  static const std::vector<std::string> named_dims = {"extraversion", "neuroticism"};
  for (std::size_t i = 0; i < dimensions; ++i) {
    if (i < named_dims.size()) {
      s.dimensions.push_back(named_dims[i]);
      s.high.push_back(named_high[i]);
      s.low.push_back(named_low[i]);
      continue;
    }
    s.dimensions.push_back("dim" + std::to_string(i));
    std::vector<std::string> h, l;
    for (int j = 0; j < 16; ++j) {
      h.push_back("d" + std::to_string(i) + "hi" + std::to_string(j));
      l.push_back("d" + std::to_string(i) + "lo" + std::to_string(j));
    }
    s.high.push_back(std::move(h));
    s.low.push_back(std::move(l));
  }
  s.neutral = {"i",    "you",  "the", "a",  "to",   "and",  "my",  "is",    "it",   "was", "so",
               "just", "like", "that", "this", "of", "in",  "on",  "for",   "with", "me",  "we",
               "at",   "have", "be",  "not", "but",  "all", "what", "about", "day",  "time"};
  static const char* cons = "bdfgklmnprstvz";
  static const char* vows = "aeiou";
  std::set<std::string> used(s.neutral.begin(), s.neutral.end());
  for (std::size_t i = 0; i < dimensions; ++i) {
    used.insert(s.high[i].begin(), s.high[i].end());
    used.insert(s.low[i].begin(), s.low[i].end());
  }
  for (std::size_t i = 1; s.neutral.size() < 132; ++i) {
    // stride through all 14*5*14*5 consonant-vowel pairs
    const std::size_t j = (i * 7919) % 4900;
    std::string w{cons[j % 14], vows[(j / 14) % 5], cons[(j / 70) % 14], vows[j / 980]};
    if (used.insert(w).second) s.neutral.push_back(w);
  }
  return s;
}

std::vector<CorpusRecord> generate_synthetic_corpus(const SynthSpec& spec, std::size_t n,
                                                    std::uint64_t seed) {
  spec.validate();
  if (n == 0) throw InputError("synthetic corpus size must be > 0");
  const std::size_t d = spec.dimensions.size();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> length(spec.min_words, spec.max_words);

  std::vector<CorpusRecord> out;
  out.reserve(n);
  for (std::uint64_t author = 0; out.size() < n; ++author) {
    std::vector<double> psi(d);
    for (auto& v : psi) v = normal(rng);
    const Split split = unit(rng) < spec.validation_fraction ? Split::validation : Split::train;
    std::vector<double> p_high(d);
    for (std::size_t i = 0; i < d; ++i) p_high[i] = sigmoid(spec.mixing_strength * psi[i]);
    for (std::size_t m = 0; m < spec.messages_per_author && out.size() < n; ++m) {
      const std::size_t len = length(rng);
      std::string text;
      for (std::size_t w = 0; w < len; ++w) {
        const std::vector<std::string>* lex = &spec.neutral;
        if (unit(rng) < spec.marker_density) {
          const std::size_t dim = static_cast<std::size_t>(unit(rng) * static_cast<double>(d));
          const std::size_t i = std::min(dim, d - 1);
          lex = unit(rng) < p_high[i] ? &spec.high[i] : &spec.low[i];
        }
        const auto pick = static_cast<std::size_t>(unit(rng) * static_cast<double>(lex->size()));
        if (!text.empty()) text.push_back(' ');
        text += (*lex)[std::min(pick, lex->size() - 1)];
      }
      CorpusRecord r;
      r.text = std::move(text);
      r.split = split;
      r.latent = psi;
      r.author = author;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<Participant> participants(std::span<const CorpusRecord> records) {
  std::vector<Participant> out;
  std::map<std::uint64_t, std::size_t> slot;
  for (const auto& r : records) {
    if (!r.author || !r.latent) throw InputError("participants: record without author or latent");
    auto [it, fresh] = slot.emplace(*r.author, out.size());
    if (fresh) {
      out.push_back({*r.author, r.text, *r.latent});
    } else {
      out[it->second].text += " " + r.text;
    }
  }
  return out;
}

double lexicon_rate(std::string_view text, std::span<const std::string> lexicon) {
  const std::unordered_set<std::string> set(lexicon.begin(), lexicon.end());
  const auto toks = scoring_tokens(text);
  if (toks.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& t : toks) hits += set.count(t);
  return static_cast<double>(hits) / static_cast<double>(toks.size());
}

AnnotateResult annotate_corpus(std::span<const CorpusRecord> records, const ScoringModel& model,
                               const FeatureExtractor& extractor) {
  AnnotateResult out;
  for (const auto& r : records) {
    std::vector<double> raw;
    try {
      raw = score_message(model, extractor, r.text);
    } catch (const EmptyFeatureError&) {
      ++out.dropped;
      continue;
    }
    CorpusRecord a = r;
    a.scores = normalize_scores(raw, model);
    out.records.push_back(std::move(a));
  }
  return out;
}

void save_corpus(const std::filesystem::path& path, std::span<const CorpusRecord> records) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError(FormatErrorKind::io, "cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::json j;
    j["text"] = r.text;
    j["scores"] = r.scores ? nlohmann::json(*r.scores) : nlohmann::json(nullptr);
    j["split"] = to_string(r.split);
    if (r.latent) j["latent"] = *r.latent;
    if (r.author) j["author"] = *r.author;
    f << j.dump() << '\n';
  }
  if (!f) throw FormatError(FormatErrorKind::io, "write failed for " + path.string());
}

std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(FormatErrorKind::io, "cannot open " + path.string());
  std::vector<CorpusRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CorpusRecord r;
      r.text = j.at("text").get<std::string>();
      if (j.contains("scores") && !j.at("scores").is_null()) {
        r.scores = j.at("scores").get<std::vector<double>>();
      }
      r.split = parse_split(j.value("split", std::string("train")));
      if (j.contains("latent")) r.latent = j.at("latent").get<std::vector<double>>();
      if (j.contains("author")) r.author = j.at("author").get<std::uint64_t>();
      if (r.scores && !out.empty() && out.front().scores &&
          out.front().scores->size() != r.scores->size()) {
        throw ConfigError("score width differs from earlier records");
      }
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw FormatError(FormatErrorKind::malformed_record,
                        path.string() + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace psyadapter
