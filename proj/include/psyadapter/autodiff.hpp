// SPDX-License-Identifier: Apache-2.0
//
// Dense 2-D tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Leaves created with
// requires_grad=true (parameters) own a gradient buffer that backward()
// accumulates into. Every primitive lives on Tape; a primitive whose inputs
// are all untracked records nothing, so inference runs without graph cost.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace psyadapter::ad {

struct Storage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient reaches this tensor
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor filled(std::size_t rows, std::size_t cols, double v, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  /// Entries drawn from N(0, std^2).
  static Tensor randn(std::size_t rows, std::size_t cols, double std, std::mt19937_64& rng,
                      bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(s_); }
  std::size_t rows() const noexcept { return s_->rows; }
  std::size_t cols() const noexcept { return s_->cols; }
  std::size_t numel() const noexcept { return s_->rows * s_->cols; }
  std::string shape_string() const;

  double at(std::size_t r, std::size_t c) const { return s_->value[r * s_->cols + c]; }
  double item() const;
  std::span<const double> values() const noexcept { return s_->value; }
  /// In-place access for optimizers and initializers.
  std::span<double> mutable_values() noexcept { return s_->value; }

  bool requires_grad() const noexcept { return s_->requires_grad; }
  void set_requires_grad(bool on);
  /// Gradient buffer; all zeros when nothing has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy with no gradient tracking.
  Tensor clone() const;

  bool same_storage(const Tensor& o) const noexcept { return s_ == o.s_; }

 private:
  explicit Tensor(std::shared_ptr<Storage> s) : s_(std::move(s)) {}
  std::shared_ptr<Storage> s_;
  friend class Tape;
};

/// Records primitive applications in execution order (which is a valid
/// topological order) and replays them in reverse for backward().
/// A tape belongs to one thread; separate tapes may run concurrently.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  /// x + bias, bias a 1×cols row broadcast over rows.
  Tensor add_row(const Tensor& x, const Tensor& bias);
  Tensor scale(const Tensor& x, double s);
  Tensor tanh(const Tensor& x);
  /// tanh-approximated GELU.
  Tensor gelu(const Tensor& x);
  /// Rows of `table` selected by `ids`.
  Tensor embedding(const Tensor& table, std::span<const int> ids);
  Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
  Tensor softmax_rows(const Tensor& x);
  /// Row r sees the first `leading + r + 1` columns; the rest get probability 0.
  Tensor causal_softmax_rows(const Tensor& x, std::size_t leading);
  Tensor cross_entropy_mean(const Tensor& logits, std::span<const int> targets);
  Tensor concat_rows(std::span<const Tensor> parts);
  Tensor concat_cols(std::span<const Tensor> parts);
  Tensor slice(const Tensor& x, std::size_t row0, std::size_t nrows, std::size_t col0,
               std::size_t ncols);
  Tensor transpose(const Tensor& x);
  /// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
  Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

  /// Populates gradients of every tracked tensor reachable from `loss`.
  void backward(const Tensor& loss);

  std::size_t size() const noexcept { return nodes_.size(); }

  /// With recording off nothing is tracked, even for parameters (inference).
  void set_recording(bool on) noexcept { recording_ = on; }

 private:
  struct Node {
    const char* op;
    std::vector<std::shared_ptr<Storage>> inputs;
    std::shared_ptr<Storage> output;
    std::function<void(const Node&)> backward;
  };

  Tensor emit(const char* op, std::shared_ptr<Storage> out,
              std::vector<std::shared_ptr<Storage>> inputs,
              std::function<void(const Node&)> backward);

  std::vector<Node> nodes_;
  bool recording_ = true;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares backward() gradients against central differences
/// (f(x+eps) - f(x-eps)) / (2 eps) for every element of every parameter.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
/// `f` must build a scalar on the tape it is handed and be deterministic.
///
/// With `richardson` the numeric estimate is (4 D(eps/2) - D(eps)) / 3 over
/// the same central quotient D, which cancels the eps^2 truncation term and
/// lets a larger eps keep roundoff small on near-zero gradients.
GradCheckResult finite_diff_check(const std::function<Tensor(Tape&)>& f,
                                  std::span<const Tensor> params, double eps,
                                  bool richardson = false);

}  // namespace psyadapter::ad
