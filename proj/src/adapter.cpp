// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/adapter.hpp"

#include <random>

#include "psyadapter/container.hpp"
#include "psyadapter/errors.hpp"

namespace psyadapter {
namespace {

using ad::Tensor;

constexpr double kAdapterInitStd = 0.02;

[[noreturn]] void mismatch(const std::string& what) {
  throw FormatError(FormatErrorKind::metadata_mismatch, what);
}

}  // namespace

LayerCoverage parse_coverage(const std::string& s) {
  if (s == "all") return LayerCoverage::all;
  if (s == "all_but_last") return LayerCoverage::all_but_last;
  throw ConfigError("unknown layer coverage '" + s + "' (expected all or all_but_last)");
}

const char* to_string(LayerCoverage c) {
  return c == LayerCoverage::all ? "all" : "all_but_last";
}

std::uint64_t AdapterConfig::covered_layers(const ModelConfig& model) const {
  return coverage == LayerCoverage::all ? model.n_layers : model.n_layers - 1;
}

void AdapterConfig::validate() const {
  if (latent_size < 1) throw ConfigError("adapter: latent size must be >= 1");
}

std::uint64_t adapter_param_count(const ModelConfig& model, const AdapterConfig& adapter) {
  model.validate();
  adapter.validate();
  return 2 * adapter.covered_layers(model) * adapter.input_width() * model.kv_width();
}

double trainable_fraction(const ModelConfig& model, const AdapterConfig& adapter,
                          const LoraConfig* lora) {
  const std::uint64_t base = count_base_params(model);
  if (base == 0) throw ConfigError("trainable fraction of a model without parameters");
  std::uint64_t trainable = adapter_param_count(model, adapter);
  if (lora != nullptr) trainable += lora_param_count(model, *lora);
  return static_cast<double>(trainable) / static_cast<double>(base);
}

std::vector<Tensor> AdapterWeights::parameters() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < key.size(); ++i) {
    out.push_back(key[i]);
    out.push_back(value[i]);
  }
  return out;
}

std::uint64_t AdapterWeights::parameter_count() const {
  std::uint64_t n = 0;
  for (const auto& t : parameters()) n += t.numel();
  return n;
}

void AdapterWeights::validate() const {
  config.validate();
  traits.validate();
  if (traits.size() != config.latent_size) {
    throw ConfigError("adapter: trait spec has " + std::to_string(traits.size()) +
                      " dimensions, latent size is " + std::to_string(config.latent_size));
  }
  const std::uint64_t covered = config.covered_layers(model);
  if (key.size() != covered || value.size() != covered) {
    throw ShapeError("adapter: expected " + std::to_string(covered) + " key/value matrices");
  }
  for (std::size_t i = 0; i < covered; ++i) {
    for (const Tensor* t : {&key[i], &value[i]}) {
      if (t->rows() != config.input_width() || t->cols() != model.kv_width()) {
        throw ShapeError("adapter: matrix " + t->shape_string() + " should be " +
                         std::to_string(config.input_width()) + "x" +
                         std::to_string(model.kv_width()));
      }
    }
  }
}

AdapterWeights init_adapter(const ModelConfig& model, const AdapterConfig& config,
                            const TraitSpec& traits, std::uint64_t seed) {
  model.validate();
  AdapterWeights a;
  a.config = config;
  a.model = model;
  a.traits = traits;
  std::mt19937_64 rng(seed);
  for (std::uint64_t l = 0; l < config.covered_layers(model); ++l) {
    for (auto* bucket : {&a.key, &a.value}) {
      Tensor m = Tensor::randn(config.input_width(), model.kv_width(), kAdapterInitStd, rng, true);
      if (config.use_bias) {
        auto v = m.mutable_values();
        std::fill(v.end() - static_cast<std::ptrdiff_t>(model.kv_width()), v.end(), 0.0);
      }
      bucket->push_back(std::move(m));
    }
  }
  a.validate();
  return a;
}

KVPrefix make_prefix(ad::Tape& tape, const Tensor& psi, const AdapterWeights& adapter,
                     const ModelConfig& model) {
  if (psi.rows() != 1 || psi.cols() != adapter.config.latent_size) {
    throw ShapeError("make_prefix: trait vector " + psi.shape_string() + " for latent size " +
                     std::to_string(adapter.config.latent_size));
  }
  if (adapter.model.n_layers != model.n_layers || adapter.model.kv_width() != model.kv_width()) {
    throw ShapeError("make_prefix: adapter was built for different model dimensions");
  }
  Tensor p = psi;
  if (adapter.config.use_bias) {
    const Tensor parts[] = {psi, Tensor::filled(1, 1, 1.0)};
    p = tape.concat_cols(parts);
  }
  KVPrefix prefix;
  prefix.layers.resize(model.n_layers);
  for (std::size_t l = 0; l < adapter.key.size(); ++l) {
    prefix.layers[l] =
        KVPrefix::Slot{tape.matmul(p, adapter.key[l]), tape.matmul(p, adapter.value[l])};
  }
  return prefix;
}

KVPrefix make_prefix(ad::Tape& tape, const TraitVector& psi, const AdapterWeights& adapter,
                     const ModelConfig& model) {
  if (psi.values.size() != adapter.config.latent_size) {
    throw ShapeError("make_prefix: trait vector has " + std::to_string(psi.values.size()) +
                     " values, adapter expects " + std::to_string(adapter.config.latent_size));
  }
  return make_prefix(tape, Tensor::from(1, psi.values.size(), psi.values), adapter, model);
}

void save_adapter(const std::filesystem::path& path, const AdapterWeights& adapter,
                  const LoraWeights* lora) {
  adapter.validate();
  io::Container c;
  c.metadata["model"] = adapter.model;
  c.metadata["latent_size"] = adapter.config.latent_size;
  c.metadata["use_bias"] = adapter.config.use_bias;
  c.metadata["coverage"] = to_string(adapter.config.coverage);
  c.metadata["traits"] = adapter.traits;
  for (std::size_t l = 0; l < adapter.key.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    c.arrays.push_back({p + "key", adapter.key[l].rows(), adapter.key[l].cols(),
                        io::to_f32(adapter.key[l].values())});
    c.arrays.push_back({p + "value", adapter.value[l].rows(), adapter.value[l].cols(),
                        io::to_f32(adapter.value[l].values())});
  }
  if (lora != nullptr) {
    c.metadata["lora"] = lora->config;
    for (std::size_t l = 0; l < lora->layers.size(); ++l) {
      for (const auto& [name, pair] : lora->layers[l]) {
        const std::string p = "lora.layers." + std::to_string(l) + "." + name + ".";
        c.arrays.push_back({p + "A", pair.a.rows(), pair.a.cols(), io::to_f32(pair.a.values())});
        c.arrays.push_back({p + "B", pair.b.rows(), pair.b.cols(), io::to_f32(pair.b.values())});
      }
    }
  }
  io::write_file(path, kAdapterMagic, c);
}

LoadedAdapter load_adapter(const std::filesystem::path& path) {
  io::Container c = io::read_file(path, kAdapterMagic);
  LoadedAdapter out;
  AdapterWeights& a = out.adapter;
  try {
    a.model = c.metadata.at("model").get<ModelConfig>();
    a.config.latent_size = c.metadata.at("latent_size").get<std::uint64_t>();
    a.config.use_bias = c.metadata.at("use_bias").get<bool>();
    a.config.coverage = parse_coverage(c.metadata.at("coverage").get<std::string>());
    a.traits = c.metadata.at("traits").get<TraitSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::corrupt_header,
                      std::string("adapter metadata is malformed: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(FormatErrorKind::corrupt_header, e.what());
  }
  try {
    a.model.validate();
    a.config.validate();
    a.traits.validate();
  } catch (const ConfigError& e) {
    mismatch(e.what());
  }
  if (a.traits.size() != a.config.latent_size) {
    mismatch("trait spec lists " + std::to_string(a.traits.size()) +
             " dimensions, latent size is " + std::to_string(a.config.latent_size));
  }

  std::size_t next = 0;
  auto take = [&](const std::string& name, std::uint64_t rows, std::uint64_t cols) {
    if (next >= c.arrays.size()) mismatch("missing array '" + name + "'");
    const io::Array& arr = c.arrays[next++];
    if (arr.name != name) mismatch("expected array '" + name + "', found '" + arr.name + "'");
    if (arr.rows != rows || arr.cols != cols) {
      mismatch("array '" + name + "' is " + std::to_string(arr.rows) + "x" +
               std::to_string(arr.cols) + ", metadata implies " + std::to_string(rows) + "x" +
               std::to_string(cols));
    }
    return Tensor::from(rows, cols, io::to_f64(arr.data), true);
  };

  const std::uint64_t rows = a.config.input_width();
  const std::uint64_t cols = a.model.kv_width();
  for (std::uint64_t l = 0; l < a.config.covered_layers(a.model); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    a.key.push_back(take(p + "key", rows, cols));
    a.value.push_back(take(p + "value", rows, cols));
  }

  if (c.metadata.contains("lora")) {
    LoraWeights lw;
    try {
      lw.config = c.metadata.at("lora").get<LoraConfig>();
      lw.config.validate();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(FormatErrorKind::corrupt_header,
                        std::string("lora metadata is malformed: ") + e.what());
    } catch (const ConfigError& e) {
      mismatch(e.what());
    }
    lw.layers.resize(a.model.n_layers);
    for (std::uint64_t l = 0; l < a.model.n_layers; ++l) {
      // Serialization iterates std::map order; mirror it.
      for (const auto& name : lw.config.target_modules) {
        auto shape = projection_shape(a.model, name);
        if (!shape) continue;
        const std::string p = "lora.layers." + std::to_string(l) + "." + name + ".";
        Tensor A = take(p + "A", lw.config.r, shape->second);
        Tensor B = take(p + "B", shape->first, lw.config.r);
        lw.layers[l].emplace(name, LoraPair{std::move(A), std::move(B)});
      }
    }
    out.lora = std::move(lw);
  }
  if (next != c.arrays.size()) {
    mismatch(std::to_string(c.arrays.size() - next) + " unexpected arrays after the adapter");
  }
  return out;
}

}  // namespace psyadapter
