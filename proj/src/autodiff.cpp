// SPDX-License-Identifier: Apache-2.0
#include "psyadapter/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "psyadapter/errors.hpp"

namespace psyadapter::ad {
namespace {

using StoragePtr = std::shared_ptr<Storage>;

StoragePtr make_storage(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("tensor extents must be positive, got " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  auto s = std::make_shared<Storage>();
  s->rows = rows;
  s->cols = cols;
  s->value.assign(rows * cols, 0.0);
  return s;
}

std::vector<double>& grad_of(Storage& s) {
  if (s.grad.empty()) s.grad.assign(s.value.size(), 0.0);
  return s.grad;
}

std::string shape_of(const Tensor& t) { return t.shape_string(); }

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor operand");
}

// C[m×n] += A[m×k] · B[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×k] += A[m×n] · B[k×n]ᵀ
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
             std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C[k×n] += A[m×k]ᵀ · B[m×n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  Tensor t(make_storage(rows, cols));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::filled(std::size_t rows, std::size_t cols, double v, bool requires_grad) {
  Tensor t = zeros(rows, cols, requires_grad);
  std::fill(t.s_->value.begin(), t.s_->value.end(), v);
  return t;
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values,
                    bool requires_grad) {
  auto s = make_storage(rows, cols);
  if (values.size() != rows * cols) {
    throw ShapeError("tensor data length " + std::to_string(values.size()) +
                     " does not match shape " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  s->value = std::move(values);
  Tensor t(std::move(s));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from(1, 1, {v}, requires_grad); }

Tensor Tensor::randn(std::size_t rows, std::size_t cols, double std, std::mt19937_64& rng,
                     bool requires_grad) {
  Tensor t = zeros(rows, cols, requires_grad);
  std::normal_distribution<double> dist(0.0, std);
  for (double& v : t.s_->value) v = dist(rng);
  return t;
}

std::string Tensor::shape_string() const {
  if (!s_) return "[undefined]";
  std::ostringstream os;
  os << "[" << s_->rows << "x" << s_->cols << "]";
  return os.str();
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_string());
  return s_->value[0];
}

void Tensor::set_requires_grad(bool on) {
  s_->requires_grad = on;
  if (on) {
    grad_of(*s_);
  } else {
    s_->grad.clear();
  }
}

std::span<const double> Tensor::grad() const {
  return grad_of(*s_);
}

void Tensor::zero_grad() {
  if (!s_->grad.empty()) std::fill(s_->grad.begin(), s_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  auto s = make_storage(s_->rows, s_->cols);
  s->value = s_->value;
  return Tensor(std::move(s));
}

// ---------------------------------------------------------------------------
// Tape plumbing

Tensor Tape::emit(const char* op, StoragePtr out, std::vector<StoragePtr> inputs,
                  std::function<void(const Node&)> backward) {
  for (double v : out->value) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
  const bool tracked = recording_ && std::any_of(inputs.begin(), inputs.end(),
                                                 [](const StoragePtr& s) { return s->requires_grad; });
  out->requires_grad = tracked;
  if (tracked) nodes_.push_back(Node{op, std::move(inputs), out, std::move(backward)});
  return Tensor(std::move(out));
}

void Tape::backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " + loss.shape_string());
  }
  if (!loss.s_->requires_grad) return;  // constant w.r.t. every parameter
  const bool on_tape = std::any_of(nodes_.begin(), nodes_.end(),
                                   [&](const Node& n) { return n.output == loss.s_; });
  if (!on_tape && !nodes_.empty()) {
    throw ContractError("backward: loss was not produced on this tape");
  }
  grad_of(*loss.s_)[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward(*it);
  }
}

// ---------------------------------------------------------------------------
// Primitives

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner extents differ for " + shape_of(a) + " x " + shape_of(b));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  auto out = make_storage(m, n);
  gemm_nn(a.s_->value.data(), b.s_->value.data(), out->value.data(), m, k, n);
  return emit("matmul", out, {a.s_, b.s_}, [m, k, n](const Node& node) {
    const auto& g = node.output->grad;
    Storage& A = *node.inputs[0];
    Storage& B = *node.inputs[1];
    if (A.requires_grad) gemm_nt(g.data(), B.value.data(), grad_of(A).data(), m, n, k);
    if (B.requires_grad) gemm_tn(A.value.data(), g.data(), grad_of(B).data(), m, k, n);
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_defined(a, "add");
  require_defined(b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("add: shapes differ " + shape_of(a) + " vs " + shape_of(b));
  }
  auto out = make_storage(a.rows(), a.cols());
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    out->value[i] = a.s_->value[i] + b.s_->value[i];
  }
  return emit("add", out, {a.s_, b.s_}, [](const Node& node) {
    const auto& g = node.output->grad;
    for (const auto& in : node.inputs) {
      if (!in->requires_grad) continue;
      auto& gi = grad_of(*in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Tensor Tape::add_row(const Tensor& x, const Tensor& bias) {
  require_defined(x, "add_row");
  require_defined(bias, "add_row");
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("add_row: bias " + shape_of(bias) + " does not fit " + shape_of(x));
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  auto out = make_storage(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out->value[r * cols + c] = x.s_->value[r * cols + c] + bias.s_->value[c];
    }
  }
  return emit("add_row", out, {x.s_, bias.s_}, [rows, cols](const Node& node) {
    const auto& g = node.output->grad;
    if (node.inputs[0]->requires_grad) {
      auto& gx = grad_of(*node.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (node.inputs[1]->requires_grad) {
      auto& gb = grad_of(*node.inputs[1]);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gb[c] += g[r * cols + c];
      }
    }
  });
}

Tensor Tape::scale(const Tensor& x, double s) {
  require_defined(x, "scale");
  auto out = make_storage(x.rows(), x.cols());
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = s * x.s_->value[i];
  return emit("scale", out, {x.s_}, [s](const Node& node) {
    const auto& g = node.output->grad;
    auto& gx = grad_of(*node.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

Tensor Tape::tanh(const Tensor& x) {
  require_defined(x, "tanh");
  auto out = make_storage(x.rows(), x.cols());
  for (std::size_t i = 0; i < out->value.size(); ++i) out->value[i] = std::tanh(x.s_->value[i]);
  return emit("tanh", out, {x.s_}, [](const Node& node) {
    const auto& g = node.output->grad;
    const auto& y = node.output->value;
    auto& gx = grad_of(*node.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Tensor Tape::gelu(const Tensor& x) {
  require_defined(x, "gelu");
  auto out = make_storage(x.rows(), x.cols());
  for (std::size_t i = 0; i < out->value.size(); ++i) {
    const double v = x.s_->value[i];
    out->value[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + 0.044715 * v * v * v)));
  }
  return emit("gelu", out, {x.s_}, [](const Node& node) {
    const auto& g = node.output->grad;
    const auto& xv = node.inputs[0]->value;
    auto& gx = grad_of(*node.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = xv[i];
      const double u = kGeluC * (v + 0.044715 * v * v * v);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
      gx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
    }
  });
}

Tensor Tape::embedding(const Tensor& table, std::span<const int> ids) {
  require_defined(table, "embedding");
  if (ids.empty()) throw ContractError("embedding: empty id list");
  const std::size_t d = table.cols();
  auto out = make_storage(ids.size(), d);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= table.rows()) {
      throw IndexError("embedding: id " + std::to_string(ids[r]) + " outside table of " +
                       std::to_string(table.rows()) + " rows");
    }
    std::copy_n(table.s_->value.begin() + static_cast<std::ptrdiff_t>(ids[r] * d), d,
                out->value.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return emit("embedding", out, {table.s_}, [idv = std::move(idv), d](const Node& node) {
    const auto& g = node.output->grad;
    auto& gt = grad_of(*node.inputs[0]);
    for (std::size_t r = 0; r < idv.size(); ++r) {
      const std::size_t base = static_cast<std::size_t>(idv[r]) * d;
      for (std::size_t c = 0; c < d; ++c) gt[base + c] += g[r * d + c];
    }
  });
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_defined(x, "layer_norm");
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gain.rows() != 1 || gain.cols() != cols || bias.rows() != 1 || bias.cols() != cols) {
    throw ShapeError("layer_norm: gain " + shape_of(gain) + " / bias " + shape_of(bias) +
                     " do not fit " + shape_of(x));
  }
  auto out = make_storage(rows, cols);
  auto xhat = std::make_shared<std::vector<double>>(rows * cols);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& xv = x.s_->value;
  for (std::size_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xv[r * cols + c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = xv[r * cols + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xv[r * cols + c] - mean) * is;
      (*xhat)[r * cols + c] = h;
      out->value[r * cols + c] = h * gain.s_->value[c] + bias.s_->value[c];
    }
  }
  return emit("layer_norm", out, {x.s_, gain.s_, bias.s_},
              [rows, cols, xhat, inv_std](const Node& node) {
                const auto& g = node.output->grad;
                Storage& X = *node.inputs[0];
                Storage& G = *node.inputs[1];
                Storage& B = *node.inputs[2];
                if (G.requires_grad || B.requires_grad) {
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                      if (G.requires_grad) grad_of(G)[c] += g[r * cols + c] * (*xhat)[r * cols + c];
                      if (B.requires_grad) grad_of(B)[c] += g[r * cols + c];
                    }
                  }
                }
                if (!X.requires_grad) return;
                auto& gx = grad_of(X);
                const double n = static_cast<double>(cols);
                for (std::size_t r = 0; r < rows; ++r) {
                  double sum_dh = 0.0, sum_dh_h = 0.0;
                  for (std::size_t c = 0; c < cols; ++c) {
                    const double dh = g[r * cols + c] * G.value[c];
                    sum_dh += dh;
                    sum_dh_h += dh * (*xhat)[r * cols + c];
                  }
                  for (std::size_t c = 0; c < cols; ++c) {
                    const double dh = g[r * cols + c] * G.value[c];
                    gx[r * cols + c] += (*inv_std)[r] / n *
                                        (n * dh - sum_dh - (*xhat)[r * cols + c] * sum_dh_h);
                  }
                }
              });
}

namespace {

// Shared softmax kernel; visible(r) columns take part in row r.
template <typename Visible>
void softmax_kernel(const std::vector<double>& x, std::vector<double>& y, std::size_t rows,
                    std::size_t cols, Visible visible) {
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t n = visible(r);
    const double* xr = x.data() + r * cols;
    double* yr = y.data() + r * cols;
    double mx = xr[0];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, xr[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      sum += yr[c];
    }
    for (std::size_t c = 0; c < n; ++c) yr[c] /= sum;
    for (std::size_t c = n; c < cols; ++c) yr[c] = 0.0;
  }
}

void softmax_backward(const std::vector<double>& y, const std::vector<double>& g,
                      std::vector<double>& gx, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* yr = y.data() + r * cols;
    const double* gr = g.data() + r * cols;
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += yr[c] * gr[c];
    double* gxr = gx.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) gxr[c] += yr[c] * (gr[c] - dot);
  }
}

}  // namespace

Tensor Tape::softmax_rows(const Tensor& x) {
  require_defined(x, "softmax_rows");
  const std::size_t rows = x.rows(), cols = x.cols();
  auto out = make_storage(rows, cols);
  softmax_kernel(x.s_->value, out->value, rows, cols, [cols](std::size_t) { return cols; });
  return emit("softmax_rows", out, {x.s_}, [rows, cols](const Node& node) {
    softmax_backward(node.output->value, node.output->grad, grad_of(*node.inputs[0]), rows,
                     cols);
  });
}

Tensor Tape::causal_softmax_rows(const Tensor& x, std::size_t leading) {
  require_defined(x, "causal_softmax_rows");
  const std::size_t rows = x.rows(), cols = x.cols();
  if (leading + rows > cols) {
    throw ShapeError("causal_softmax_rows: " + shape_of(x) + " cannot hold " +
                     std::to_string(leading) + " leading columns plus a causal square");
  }
  auto out = make_storage(rows, cols);
  softmax_kernel(x.s_->value, out->value, rows, cols,
                 [leading](std::size_t r) { return leading + r + 1; });
  // Masked entries have y = 0, so the dense backward formula already ignores them.
  return emit("causal_softmax_rows", out, {x.s_}, [rows, cols](const Node& node) {
    softmax_backward(node.output->value, node.output->grad, grad_of(*node.inputs[0]), rows,
                     cols);
  });
}

Tensor Tape::cross_entropy_mean(const Tensor& logits, std::span<const int> targets) {
  require_defined(logits, "cross_entropy_mean");
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) {
    throw ShapeError("cross_entropy_mean: " + std::to_string(targets.size()) +
                     " targets for logits " + shape_of(logits));
  }
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw IndexError("cross_entropy_mean: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(v) + ")");
    }
  }
  auto probs = std::make_shared<std::vector<double>>(n * v);
  softmax_kernel(logits.s_->value, *probs, n, v, [v](std::size_t) { return v; });
  double total = 0.0;
  const auto& x = logits.s_->value;
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.data() + r * v;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(xr, xr + v) - xr);
    const double mx = xr[arg];
    // log-sum-exp around the max with log1p keeps confident rows accurate.
    double rest = 0.0;
    for (std::size_t c = 0; c < v; ++c) {
      if (c != arg) rest += std::exp(xr[c] - mx);
    }
    total += std::log1p(rest) + (mx - xr[targets[r]]);
  }
  auto out = make_storage(1, 1);
  out->value[0] = total / static_cast<double>(n);
  std::vector<int> tv(targets.begin(), targets.end());
  return emit("cross_entropy_mean", out, {logits.s_},
              [probs, tv = std::move(tv), n, v](const Node& node) {
                const double g = node.output->grad[0] / static_cast<double>(n);
                auto& gx = grad_of(*node.inputs[0]);
                for (std::size_t r = 0; r < n; ++r) {
                  for (std::size_t c = 0; c < v; ++c) gx[r * v + c] += g * (*probs)[r * v + c];
                  gx[r * v + static_cast<std::size_t>(tv[r])] -= g;
                }
              });
}

Tensor Tape::concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<StoragePtr> inputs;
  for (const auto& p : parts) {
    require_defined(p, "concat_rows");
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: " + shape_of(p) + " has a different width than " +
                       shape_of(parts[0]));
    }
    rows += p.rows();
    inputs.push_back(p.s_);
  }
  auto out = make_storage(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.s_->value.begin(), p.s_->value.end(),
              out->value.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.numel();
  }
  return emit("concat_rows", out, std::move(inputs), [](const Node& node) {
    const auto& g = node.output->grad;
    std::size_t off = 0;
    for (const auto& in : node.inputs) {
      const std::size_t len = in->value.size();
      if (in->requires_grad) {
        auto& gi = grad_of(*in);
        for (std::size_t i = 0; i < len; ++i) gi[i] += g[off + i];
      }
      off += len;
    }
  });
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<StoragePtr> inputs;
  for (const auto& p : parts) {
    require_defined(p, "concat_cols");
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: " + shape_of(p) + " has a different height than " +
                       shape_of(parts[0]));
    }
    cols += p.cols();
    inputs.push_back(p.s_);
  }
  auto out = make_storage(rows, cols);
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(p.s_->value.begin() + static_cast<std::ptrdiff_t>(r * p.cols()), p.cols(),
                  out->value.begin() + static_cast<std::ptrdiff_t>(r * cols + c0));
    }
    c0 += p.cols();
  }
  return emit("concat_cols", out, std::move(inputs), [rows, cols](const Node& node) {
    const auto& g = node.output->grad;
    std::size_t c0 = 0;
    for (const auto& in : node.inputs) {
      const std::size_t w = in->cols;
      if (in->requires_grad) {
        auto& gi = grad_of(*in);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < w; ++c) gi[r * w + c] += g[r * cols + c0 + c];
        }
      }
      c0 += w;
    }
  });
}

Tensor Tape::slice(const Tensor& x, std::size_t row0, std::size_t nrows, std::size_t col0,
                   std::size_t ncols) {
  require_defined(x, "slice");
  if (row0 + nrows > x.rows() || col0 + ncols > x.cols()) {
    throw ShapeError("slice: rows [" + std::to_string(row0) + "," + std::to_string(row0 + nrows) +
                     ") cols [" + std::to_string(col0) + "," + std::to_string(col0 + ncols) +
                     ") exceed " + shape_of(x));
  }
  const std::size_t src_cols = x.cols();
  auto out = make_storage(nrows, ncols);
  for (std::size_t r = 0; r < nrows; ++r) {
    std::copy_n(x.s_->value.begin() + static_cast<std::ptrdiff_t>((row0 + r) * src_cols + col0),
                ncols, out->value.begin() + static_cast<std::ptrdiff_t>(r * ncols));
  }
  return emit("slice", out, {x.s_}, [=](const Node& node) {
    const auto& g = node.output->grad;
    auto& gx = grad_of(*node.inputs[0]);
    for (std::size_t r = 0; r < nrows; ++r) {
      for (std::size_t c = 0; c < ncols; ++c) {
        gx[(row0 + r) * src_cols + col0 + c] += g[r * ncols + c];
      }
    }
  });
}

Tensor Tape::transpose(const Tensor& x) {
  require_defined(x, "transpose");
  const std::size_t rows = x.rows(), cols = x.cols();
  auto out = make_storage(cols, rows);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out->value[c * rows + r] = x.s_->value[r * cols + c];
  }
  return emit("transpose", out, {x.s_}, [rows, cols](const Node& node) {
    const auto& g = node.output->grad;
    auto& gx = grad_of(*node.inputs[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c * rows + r];
    }
  });
}

Tensor Tape::dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  require_defined(x, "dropout");
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: probability must be in [0, 1)");
  auto out = make_storage(x.rows(), x.cols());
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask->size(); ++i) {
    (*mask)[i] = u(rng) < p ? 0.0 : keep_scale;
    out->value[i] = x.s_->value[i] * (*mask)[i];
  }
  return emit("dropout", out, {x.s_}, [mask](const Node& node) {
    const auto& g = node.output->grad;
    auto& gx = grad_of(*node.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
  });
}

// ---------------------------------------------------------------------------

GradCheckResult finite_diff_check(const std::function<Tensor(Tape&)>& f,
                                  std::span<const Tensor> params, double eps, bool richardson) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_check: eps must be positive");

  std::vector<Tensor> ps(params.begin(), params.end());
  for (auto& p : ps) {
    if (!p.requires_grad()) throw ContractError("finite_diff_check: parameter is not tracked");
    p.zero_grad();
  }
  double base = 0.0;
  {
    Tape tape;
    Tensor loss = f(tape);
    base = loss.item();
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape tape;
    return f(tape).item();
  };
  if (eval() != base) {
    throw ContractError("finite_diff_check: function is not deterministic");
  }

  GradCheckResult res;
  for (std::size_t pi = 0; pi < ps.size(); ++pi) {
    std::vector<double> analytic(ps[pi].grad().begin(), ps[pi].grad().end());
    auto vals = ps[pi].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      auto central = [&](double h) {
        vals[i] = orig + h;
        const double fp = eval();
        vals[i] = orig - h;
        const double fm = eval();
        vals[i] = orig;
        return (fp - fm) / (2.0 * h);
      };
      const double numeric =
          richardson ? (4.0 * central(0.5 * eps) - central(eps)) / 3.0 : central(eps);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic[i] - numeric) / denom;
      ++res.checked;
      if (rel > res.max_rel_error || res.checked == 1) {
        res.max_rel_error = std::max(res.max_rel_error, rel);
        res.worst_param = pi;
        res.worst_index = i;
        res.worst_analytic = analytic[i];
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace psyadapter::ad
