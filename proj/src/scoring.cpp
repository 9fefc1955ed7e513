// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include <Eigen/Dense>

#include "psyadapter/container.hpp"
#include "psyadapter/errors.hpp"
#include "psyadapter/stats.hpp"

namespace psyadapter {

std::vector<std::string> scoring_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) && c < 128) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

FeatureExtractor::FeatureExtractor(std::vector<std::string> vocabulary)
    : vocab_(std::move(vocabulary)) {
  index();
}

FeatureExtractor::FeatureExtractor(std::vector<std::string> vocabulary, std::vector<double> topics,
                                   std::size_t n_topics)
    : vocab_(std::move(vocabulary)), topics_(std::move(topics)), n_topics_(n_topics) {
  if (n_topics_ == 0) throw ConfigError("topic matrix needs at least one topic");
  if (topics_.size() != vocab_.size() * n_topics_) {
    throw ShapeError("topic matrix has " + std::to_string(topics_.size()) + " entries, expected " +
                     std::to_string(vocab_.size()) + " x " + std::to_string(n_topics_));
  }
  for (double v : topics_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("topic loadings must be finite and >= 0");
  }
  index();
}

void FeatureExtractor::index() {
  if (vocab_.empty()) throw ConfigError("feature vocabulary is empty");
  ids_.clear();
  for (std::size_t i = 0; i < vocab_.size(); ++i) {
    if (!ids_.emplace(vocab_[i], i).second) {
      throw ConfigError("feature vocabulary repeats '" + vocab_[i] + "'");
    }
  }
}

std::vector<double> FeatureExtractor::features(std::string_view text) const {
  std::vector<double> freq(vocab_.size(), 0.0);
  std::size_t total = 0;
  for (const auto& tok : scoring_tokens(text)) {
    auto it = ids_.find(tok);
    if (it == ids_.end()) continue;
    freq[it->second] += 1.0;
    ++total;
  }
  if (total == 0) throw EmptyFeatureError("no in-vocabulary tokens in message");
  for (double& f : freq) f /= static_cast<double>(total);
  if (!has_topics()) return freq;
  std::vector<double> out(n_topics_, 0.0);
  for (std::size_t w = 0; w < vocab_.size(); ++w) {
    if (freq[w] == 0.0) continue;
    for (std::size_t t = 0; t < n_topics_; ++t) out[t] += freq[w] * topics_[w * n_topics_ + t];
  }
  return out;
}

std::vector<std::string> build_scoring_vocabulary(std::span<const std::string> texts,
                                                  std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts)
    for (auto& tok : scoring_tokens(t)) ++counts[std::move(tok)];
  std::vector<std::string> out;
  for (const auto& [w, n] : counts)
    if (n >= min_count) out.push_back(w);
  return out;
}

std::vector<double> ScoringModel::apply(std::span<const double> features) const {
  if (features.size() != width) {
    throw ShapeError("scoring model expects " + std::to_string(width) + " features, got " +
                     std::to_string(features.size()));
  }
  std::vector<double> out(traits.size(), 0.0);
  for (std::size_t j = 0; j < traits.size(); ++j) {
    const double* w = weights.data() + j * width;
    for (std::size_t i = 0; i < width; ++i) out[j] += w[i] * features[i];
  }
  return out;
}

ScoringModel fit_scoring_model(const std::vector<std::vector<double>>& X,
                               const std::vector<std::vector<double>>& Psi, double lambda,
                               std::vector<std::string> traits) {
  if (X.empty()) throw InputError("fit: no participants");
  if (X.size() != Psi.size()) {
    throw InputError("fit: " + std::to_string(X.size()) + " feature rows but " +
                     std::to_string(Psi.size()) + " score rows");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("fit: lambda must be >= 0");
  const std::size_t n = X.size(), d = X[0].size(), t = traits.size();
  if (d == 0 || t == 0) throw InputError("fit: empty feature or trait width");
  Eigen::MatrixXd x(n, d), y(n, t);
  for (std::size_t r = 0; r < n; ++r) {
    if (X[r].size() != d) throw InputError("fit: ragged feature rows");
    if (Psi[r].size() != t) throw InputError("fit: score row width differs from trait count");
    for (std::size_t c = 0; c < d; ++c) x(r, c) = X[r][c];
    for (std::size_t c = 0; c < t; ++c) y(r, c) = Psi[r][c];
  }

  ScoringModel m;
  m.traits = std::move(traits);
  m.width = d;
  m.lambda = lambda;
  m.report.rows = n;

  Eigen::MatrixXd a = x.transpose() * x;
  a.diagonal().array() += lambda;
  const Eigen::MatrixXd rhs = x.transpose() * y;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  m.report.rank = static_cast<std::size_t>(lu.rank());
  Eigen::MatrixXd w;
  if (lu.isInvertible()) {
    w = Eigen::LDLT<Eigen::MatrixXd>(a).solve(rhs);
  } else {
    w = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(a).pseudoInverse() * rhs;
    m.report.pseudo_inverse = true;
  }
  m.weights.resize(t * d);
  for (std::size_t j = 0; j < t; ++j)
    for (std::size_t i = 0; i < d; ++i) m.weights[j * d + i] = w(i, j);
  for (double v : m.weights) {
    if (!std::isfinite(v)) throw NumericError("fit produced non-finite weights");
  }
  return m;
}

std::vector<double> score_message(const ScoringModel& model, const FeatureExtractor& extractor,
                                  std::string_view text) {
  return model.apply(extractor.features(text));
}

std::size_t calibrate(ScoringModel& model, const FeatureExtractor& extractor,
                      std::span<const std::string> texts) {
  const std::size_t t = model.traits.size();
  std::vector<std::vector<double>> cols(t);
  for (const auto& text : texts) {
    std::vector<double> s;
    try {
      s = score_message(model, extractor, text);
    } catch (const EmptyFeatureError&) {
      continue;
    }
    for (std::size_t j = 0; j < t; ++j) cols[j].push_back(s[j]);
  }
  if (t == 0 || cols[0].size() < 2) throw InputError("calibrate: fewer than two scorable messages");
  std::vector<double> mu(t), sigma(t);
  for (std::size_t j = 0; j < t; ++j) {
    mu[j] = stats::mean(cols[j]);
    sigma[j] = stats::pstdev(cols[j]);
    if (!(sigma[j] > 0.0)) {
      throw NumericError("calibrate: trait '" + model.traits[j] + "' has zero spread");
    }
  }
  model.mu = std::move(mu);
  model.sigma = std::move(sigma);
  return cols[0].size();
}

std::vector<double> normalize_scores(std::span<const double> scores, const ScoringModel& model) {
  if (!model.mu || !model.sigma) throw StateError("scoring model has no normalization statistics");
  if (scores.size() != model.mu->size()) {
    throw ShapeError("normalize: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(model.mu->size()) + " traits");
  }
  std::vector<double> out(scores.size());
  for (std::size_t j = 0; j < scores.size(); ++j) out[j] = (scores[j] - (*model.mu)[j]) / (*model.sigma)[j];
  return out;
}

namespace {

[[noreturn]] void bad_header(const std::string& what) {
  throw FormatError(FormatErrorKind::corrupt_header, what);
}

io::Array topic_array(const FeatureExtractor& e) {
  return {"topics", e.vocabulary().size(), e.n_topics(), io::to_f32(e.topics())};
}

FeatureExtractor extractor_from(const io::Container& c) {
  std::vector<std::string> vocab;
  try {
    vocab = c.metadata.at("vocabulary").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    bad_header(std::string("vocabulary: ") + e.what());
  }
  try {
    if (const io::Array* t = c.try_find("topics")) {
      if (t->rows != vocab.size()) {
        throw FormatError(FormatErrorKind::metadata_mismatch,
                          "topic matrix has " + std::to_string(t->rows) + " rows for a vocabulary of " +
                              std::to_string(vocab.size()));
      }
      return FeatureExtractor(std::move(vocab), io::to_f64(t->data), t->cols);
    }
    return FeatureExtractor(std::move(vocab));
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorKind::metadata_mismatch, e.what());
  } catch (const ShapeError& e) {
    throw FormatError(FormatErrorKind::metadata_mismatch, e.what());
  }
}

}  // namespace

void save_scoring(const std::filesystem::path& path, const ScoringModel& model,
                  const FeatureExtractor& extractor) {
  if (model.width != extractor.width()) {
    throw ShapeError("scoring model width " + std::to_string(model.width) +
                     " does not match extractor width " + std::to_string(extractor.width()));
  }
  io::Container c;
  c.metadata["vocabulary"] = extractor.vocabulary();
  c.metadata["traits"] = model.traits;
  c.metadata["lambda"] = model.lambda;
  c.metadata["fit"] = {{"pseudo_inverse", model.report.pseudo_inverse},
                       {"rank", model.report.rank},
                       {"rows", model.report.rows}};
  if (model.mu && model.sigma) {
    c.metadata["mu"] = *model.mu;
    c.metadata["sigma"] = *model.sigma;
  }
  c.arrays.push_back({"W", model.traits.size(), model.width, io::to_f32(model.weights)});
  if (extractor.has_topics()) c.arrays.push_back(topic_array(extractor));
  io::write_file(path, kScoringMagic, c);
}

LoadedScoring load_scoring(const std::filesystem::path& path) {
  io::Container c = io::read_file(path, kScoringMagic);
  LoadedScoring out;
  out.extractor = extractor_from(c);
  ScoringModel& m = out.model;
  try {
    m.traits = c.metadata.at("traits").get<std::vector<std::string>>();
    m.lambda = c.metadata.at("lambda").get<double>();
    const auto& fit = c.metadata.at("fit");
    m.report.pseudo_inverse = fit.at("pseudo_inverse").get<bool>();
    m.report.rank = fit.at("rank").get<std::size_t>();
    m.report.rows = fit.at("rows").get<std::size_t>();
    if (c.metadata.contains("mu")) {
      m.mu = c.metadata.at("mu").get<std::vector<double>>();
      m.sigma = c.metadata.at("sigma").get<std::vector<double>>();
    }
  } catch (const nlohmann::json::exception& e) {
    bad_header(std::string("scoring metadata: ") + e.what());
  }
  const io::Array* w = c.try_find("W");
  if (w == nullptr) throw FormatError(FormatErrorKind::metadata_mismatch, "missing array 'W'");
  m.width = out.extractor.width();
  if (w->rows != m.traits.size() || w->cols != m.width) {
    throw FormatError(FormatErrorKind::metadata_mismatch,
                      "W is " + std::to_string(w->rows) + "x" + std::to_string(w->cols) +
                          ", metadata implies " + std::to_string(m.traits.size()) + "x" +
                          std::to_string(m.width));
  }
  if (m.mu && (m.mu->size() != m.traits.size() || m.sigma->size() != m.traits.size())) {
    throw FormatError(FormatErrorKind::metadata_mismatch, "normalization stats length differs from trait count");
  }
  m.weights = io::to_f64(w->data);
  return out;
}

void save_topics(const std::filesystem::path& path, const FeatureExtractor& extractor) {
  if (!extractor.has_topics()) throw ContractError("save_topics: extractor has no topic matrix");
  io::Container c;
  c.metadata["vocabulary"] = extractor.vocabulary();
  c.arrays.push_back(topic_array(extractor));
  io::write_file(path, kTopicMagic, c);
}

FeatureExtractor load_topics(const std::filesystem::path& path) {
  io::Container c = io::read_file(path, kTopicMagic);
  if (c.try_find("topics") == nullptr) {
    throw FormatError(FormatErrorKind::metadata_mismatch, "topic file has no 'topics' array");
  }
  return extractor_from(c);
}

}  // namespace psyadapter
