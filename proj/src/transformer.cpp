// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/transformer.hpp"

#include <cmath>

#include "psyadapter/container.hpp"
#include "psyadapter/errors.hpp"

namespace psyadapter {
namespace {

using ad::Tape;
using ad::Tensor;

constexpr double kInitStd = 0.02;

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const LoraPair* lora,
              const ForwardOptions& opt, double lora_scale) {
  Tensor y = tape.matmul(x, tape.transpose(w));
  if (lora == nullptr) return y;
  Tensor xin = x;
  if (opt.training && opt.lora->config.dropout > 0.0) {
    xin = tape.dropout(x, opt.lora->config.dropout, *opt.dropout_rng);
  }
  Tensor down = tape.matmul(xin, tape.transpose(lora->a));
  Tensor up = tape.matmul(down, tape.transpose(lora->b));
  return tape.add(y, tape.scale(up, lora_scale));
}

void check_prefix(const KVPrefix& prefix, const ModelConfig& c) {
  if (prefix.layers.size() != c.n_layers) {
    throw ShapeError("prefix spans " + std::to_string(prefix.layers.size()) +
                     " layers, model has " + std::to_string(c.n_layers));
  }
  for (const auto& slot : prefix.layers) {
    if (!slot) continue;
    if (slot->key.rows() != 1 || slot->key.cols() != c.kv_width() || slot->value.rows() != 1 ||
        slot->value.cols() != c.kv_width()) {
      throw ShapeError("prefix slot must be 1x" + std::to_string(c.kv_width()) + ", got key " +
                       slot->key.shape_string() + " value " + slot->value.shape_string());
    }
  }
}

}  // namespace

std::vector<std::pair<std::string, Tensor>> ModelWeights::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_emb", tok_emb);
  out.emplace_back("pos_emb", pos_emb);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    out.emplace_back(p + "ln1.gain", L.ln1_gain);
    out.emplace_back(p + "ln1.bias", L.ln1_bias);
    out.emplace_back(p + "attn.q_proj", L.q_proj);
    out.emplace_back(p + "attn.k_proj", L.k_proj);
    out.emplace_back(p + "attn.v_proj", L.v_proj);
    out.emplace_back(p + "attn.o_proj", L.o_proj);
    out.emplace_back(p + "ln2.gain", L.ln2_gain);
    out.emplace_back(p + "ln2.bias", L.ln2_bias);
    out.emplace_back(p + "mlp.up_proj", L.up_proj);
    out.emplace_back(p + "mlp.down_proj", L.down_proj);
  }
  out.emplace_back("lnf.gain", lnf_gain);
  out.emplace_back("lnf.bias", lnf_bias);
  if (!config.tied_embeddings) out.emplace_back("head", head);
  return out;
}

std::uint64_t ModelWeights::parameter_count() const {
  std::uint64_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

void ModelWeights::set_frozen(bool on) {
  for (auto& [name, t] : named_parameters()) t.set_requires_grad(!on);
  frozen = on;
}

ModelWeights init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate_runnable();
  std::mt19937_64 rng(seed);
  const auto d = config.d_model;
  auto mat = [&](std::uint64_t rows, std::uint64_t cols) {
    return Tensor::randn(rows, cols, kInitStd, rng);
  };
  ModelWeights w;
  w.config = config;
  w.tok_emb = mat(config.vocab_size, d);
  w.pos_emb = mat(config.max_seq_len, d);
  for (std::uint64_t l = 0; l < config.n_layers; ++l) {
    LayerWeights L;
    L.ln1_gain = Tensor::filled(1, d, 1.0);
    L.ln1_bias = Tensor::zeros(1, d);
    L.q_proj = mat(config.q_width(), d);
    L.k_proj = mat(config.kv_width(), d);
    L.v_proj = mat(config.kv_width(), d);
    L.o_proj = mat(d, config.q_width());
    L.ln2_gain = Tensor::filled(1, d, 1.0);
    L.ln2_bias = Tensor::zeros(1, d);
    L.up_proj = mat(config.d_ff, d);
    L.down_proj = mat(d, config.d_ff);
    w.layers.push_back(std::move(L));
  }
  w.lnf_gain = Tensor::filled(1, d, 1.0);
  w.lnf_bias = Tensor::zeros(1, d);
  if (!config.tied_embeddings) w.head = mat(config.vocab_size, d);
  w.frozen = true;
  return w;
}

Tensor forward_batch(Tape& tape, const ModelWeights& w, std::span<const SequenceInput> batch,
                     const ForwardOptions& opt) {
  const ModelConfig& c = w.config;
  if (batch.empty()) throw InputError("forward: empty batch");
  if (opt.lora != nullptr && opt.training && opt.lora->config.dropout > 0.0 &&
      opt.dropout_rng == nullptr) {
    throw ContractError("forward: training with LoRA dropout needs a dropout rng");
  }

  std::vector<int> ids, positions;
  for (const auto& seq : batch) {
    if (seq.tokens.empty()) throw InputError("forward: empty token sequence");
    if (seq.tokens.size() > c.max_seq_len) {
      throw InputError("forward: sequence of " + std::to_string(seq.tokens.size()) +
                       " tokens exceeds max_seq_len " + std::to_string(c.max_seq_len));
    }
    for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
      const int id = seq.tokens[t];
      if (id < 0 || static_cast<std::uint64_t>(id) >= c.vocab_size) {
        throw InputError("forward: token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(c.vocab_size));
      }
      ids.push_back(id);
      positions.push_back(static_cast<int>(t));
    }
    if (seq.prefix != nullptr) check_prefix(*seq.prefix, c);
  }

  const std::size_t dh = c.d_head;
  const std::size_t group = c.n_heads / c.n_kv_heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double lora_scale = opt.lora ? opt.lora->config.scaling() : 0.0;
  auto lora_for = [&](std::size_t l, const char* name) -> const LoraPair* {
    return opt.lora ? opt.lora->find(l, name) : nullptr;
  };

  Tensor x = tape.add(tape.embedding(w.tok_emb, ids), tape.embedding(w.pos_emb, positions));

  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const LayerWeights& L = w.layers[l];
    Tensor h = tape.layer_norm(x, L.ln1_gain, L.ln1_bias);
    Tensor q = linear(tape, h, L.q_proj, lora_for(l, "q_proj"), opt, lora_scale);
    Tensor k = linear(tape, h, L.k_proj, lora_for(l, "k_proj"), opt, lora_scale);
    Tensor v = linear(tape, h, L.v_proj, lora_for(l, "v_proj"), opt, lora_scale);

    std::vector<Tensor> seq_outputs;
    seq_outputs.reserve(batch.size());
    std::size_t row0 = 0;
    for (const auto& seq : batch) {
      const std::size_t n = seq.tokens.size();
      const bool use_prefix =
          opt.include_prefix_in_attention && seq.prefix != nullptr && seq.prefix->covers(l);
      std::vector<Tensor> heads;
      heads.reserve(c.n_heads);
      for (std::size_t hd = 0; hd < c.n_heads; ++hd) {
        const std::size_t g = hd / group;
        Tensor qh = tape.slice(q, row0, n, hd * dh, dh);
        Tensor kh = tape.slice(k, row0, n, g * dh, dh);
        Tensor vh = tape.slice(v, row0, n, g * dh, dh);
        std::size_t leading = 0;
        if (use_prefix) {
          const auto& slot = *seq.prefix->layers[l];
          const Tensor kp[] = {tape.slice(slot.key, 0, 1, g * dh, dh), kh};
          const Tensor vp[] = {tape.slice(slot.value, 0, 1, g * dh, dh), vh};
          kh = tape.concat_rows(kp);
          vh = tape.concat_rows(vp);
          leading = 1;
        }
        Tensor scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), att_scale);
        Tensor probs = tape.causal_softmax_rows(scores, leading);
        heads.push_back(tape.matmul(probs, vh));
      }
      seq_outputs.push_back(heads.size() == 1 ? heads[0] : tape.concat_cols(heads));
      row0 += n;
    }
    Tensor attn = seq_outputs.size() == 1 ? seq_outputs[0] : tape.concat_rows(seq_outputs);
    x = tape.add(x, linear(tape, attn, L.o_proj, lora_for(l, "o_proj"), opt, lora_scale));

    Tensor h2 = tape.layer_norm(x, L.ln2_gain, L.ln2_bias);
    Tensor up = tape.gelu(linear(tape, h2, L.up_proj, lora_for(l, "up_proj"), opt, lora_scale));
    x = tape.add(x, linear(tape, up, L.down_proj, lora_for(l, "down_proj"), opt, lora_scale));
  }

  Tensor xf = tape.layer_norm(x, w.lnf_gain, w.lnf_bias);
  const Tensor& out_table = c.tied_embeddings ? w.tok_emb : w.head;
  return tape.matmul(xf, tape.transpose(out_table));
}

Tensor forward(Tape& tape, const ModelWeights& weights, std::span<const int> tokens,
               const KVPrefix* prefix, bool include_prefix_in_attention,
               const ForwardOptions& options) {
  ForwardOptions opt = options;
  opt.include_prefix_in_attention = include_prefix_in_attention;
  const SequenceInput seq{tokens, prefix};
  return forward_batch(tape, weights, std::span<const SequenceInput>(&seq, 1), opt);
}

void save_model(const std::filesystem::path& path, const ModelWeights& weights,
                const nlohmann::json& extra) {
  io::Container c;
  c.metadata["config"] = weights.config;
  c.metadata["extra"] = extra;
  for (const auto& [name, t] : weights.named_parameters()) {
    c.arrays.push_back({name, t.rows(), t.cols(), io::to_f32(t.values())});
  }
  io::write_file(path, kModelMagic, c);
}

LoadedModel load_model(const std::filesystem::path& path) {
  io::Container c = io::read_file(path, kModelMagic);
  ModelConfig config;
  try {
    config = c.metadata.at("config").get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::corrupt_header,
                      std::string("model config is malformed: ") + e.what());
  }
  try {
    config.validate_runnable();
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorKind::metadata_mismatch, e.what());
  }
  LoadedModel out;
  out.weights = init_model(config, 0);
  const auto params = out.weights.named_parameters();
  if (params.size() != c.arrays.size()) {
    throw FormatError(FormatErrorKind::metadata_mismatch,
                      "expected " + std::to_string(params.size()) + " arrays, file lists " +
                          std::to_string(c.arrays.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto [name, t] = params[i];
    const io::Array& a = c.arrays[i];
    if (a.name != name || a.rows != t.rows() || a.cols != t.cols()) {
      throw FormatError(FormatErrorKind::metadata_mismatch,
                        "array '" + a.name + "' " + std::to_string(a.rows) + "x" +
                            std::to_string(a.cols) + " does not match expected '" + name + "' " +
                            t.shape_string());
    }
    auto dst = t.mutable_values();
    for (std::size_t j = 0; j < a.data.size(); ++j) dst[j] = a.data[j];
  }
  out.extra = c.metadata.value("extra", nlohmann::json::object());
  return out;
}

}  // namespace psyadapter
