#pragma once

// Dense 2-D tensors with tape-based reverse-mode differentiation.
//
// Every op whose inputs require gradients appends its result node to a
// thread-local tape. backward() walks that tape in reverse creation order,
// then frees it, so a tape lives for exactly one forward/backward pass.
// Parameters are leaves and live outside the tape.

#include <Eigen/Dense>

#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace memground {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  // Propagates this node's accumulated grad into its parents.
  std::function<void(const Matrix&)> backward;
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  // Leaf that never receives gradients.
  static Tensor constant(Matrix value);
  // Leaf that accumulates gradients across backward passes until zero_grad().
  static Tensor parameter(Matrix value);
  static Tensor zeros(Eigen::Index rows, Eigen::Index cols);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  std::string shape_string() const;

  const Matrix& value() const { return node_->value; }
  // Direct mutation is meant for leaves (optimizer steps, finite differences).
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.setZero(); }

  // Value of a 1x1 tensor.
  double item() const;

  // A constant carrying a copy of this tensor's value.
  Tensor detach() const;

  // Internal: construct from a node (used by the op implementations).
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Seeds d(out)/d(out) = 1 for a 1x1 tensor and runs the tape backwards.
// The tape is released afterwards.
void backward(const Tensor& out);

// Drops all recorded nodes without propagating.
void clear_tape();
std::size_t tape_size();

// While alive, ops on this thread record nothing and produce constants.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Number of degenerate-vector warnings raised by cosine similarity since
// start-up (a norm below kDegenerateNorm yields similarity 0).
std::size_t degenerate_vector_warnings();
inline constexpr double kDegenerateNorm = 1e-12;

// Scalar cosine similarity, clamped to [-1, 1]. Returns 0 and counts a
// warning if either vector has norm below kDegenerateNorm.
double cosine_sim(std::span<const double> a, std::span<const double> b);

// ---- differentiable ops ---------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // Hadamard
Tensor scale(const Tensor& a, double s);
// a (m x n) plus a 1 x n row broadcast over every row.
Tensor add_row(const Tensor& a, const Tensor& row);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
// Elementwise clamp; gradient is zero where the bound is active.
Tensor clamp(const Tensor& a, double lo, double hi);

// Elementwise smooth L1 (Huber with beta = 1) of a - b.
Tensor smooth_l1(const Tensor& a, const Tensor& b);
// Elementwise binary cross entropy between constant labels in [0,1] and
// sigmoid(logits), computed in the numerically stable logit form.
Tensor bce_with_logits(const Tensor& logits, const Matrix& labels);

// Row-wise softmax, stabilised by subtracting each row's maximum.
// Throws NumericError on NaN/Inf input.
Tensor row_softmax(const Tensor& a);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index count);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index count);
inline Tensor row(const Tensor& a, Eigen::Index i) { return slice_rows(a, i, 1); }
// Rows of `table` selected by `ids` (embedding lookup). Throws InputError on
// an out-of-range id.
Tensor gather_rows(const Tensor& table, std::span<const int> ids);
// out[t] = a[t + offset] when in range, zero row otherwise.
Tensor shift_rows(const Tensor& a, Eigen::Index offset);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Cosine similarity of every key row against every row of a constant slot
// matrix: (P x D) x (L x D) -> P x L. Differentiable in keys only.
Tensor cosine_rows(const Tensor& keys, const Matrix& slots);
// Same, differentiable in both arguments.
Tensor cosine_rows(const Tensor& keys, const Tensor& slots);

// row_softmax(cosine_rows(keys, slots)) * slots as a single node.
Tensor slot_read(const Tensor& keys, const Matrix& slots);

}  // namespace memground
