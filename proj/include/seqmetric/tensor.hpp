#pragma once

// Dense 2-D arrays with tape-based reverse-mode differentiation.
//
// Every array is a matrix; vectors are 1 x n rows and scalars are 1 x 1.
// Ops evaluated while a Tape is active (see TapeScope) and touching at least
// one input with requires_grad are recorded; Tape::backward replays them in
// reverse creation order.

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace seqmetric {

using Shape = std::array<std::size_t, 2>;

std::string shape_str(const Shape& s);

class ShapeError : public std::runtime_error {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  ShapeError(const std::string& op, const std::string& what);
};

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major matrix of doubles.
class Array {
 public:
  Array() = default;
  Array(std::size_t rows, std::size_t cols, double fill = 0.0);
  Array(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Array scalar(double v) { return Array(1, 1, v); }
  static Array row(std::vector<double> v);
  static Array identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_[1]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double item() const;
  bool all_finite() const;
  void fill(double v);

  friend bool operator==(const Array&, const Array&) = default;

 private:
  Shape shape_{0, 0};
  std::vector<double> data_;
};

struct Node {
  Array value;
  Array grad;  // empty until backward reaches the node
  bool requires_grad = false;
};

/// Shared handle to a value (and its gradient slot).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Array value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Array& value() const { return node_->value; }
  Array& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient, or zeros of the value's shape if none has been accumulated.
  Array grad() const;
  void zero_grad() { node_->grad = Array(); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  friend class Tape;
  std::shared_ptr<Node> node_;
};

inline Tensor parameter(Array v) { return Tensor(std::move(v), true); }
inline Tensor constant(Array v) { return Tensor(std::move(v), false); }

enum class OpKind {
  MatMul,
  Add,
  Sub,
  Mul,
  Div,
  AddRow,
  Neg,
  Scale,
  AddScalar,
  Sigmoid,
  Tanh,
  Relu,
  Exp,
  Log,
  Sqrt,
  Square,
  Concat,
  Slice,
  Transpose,
  Reshape,
  Sum,
  Mean,
  SumAll,
  MeanAll,
  Softmax,
  LogSoftmax,
  SquaredNorm,
  NormalizeRows,
  StandardizeCols,
  L2NormalizeRows,
  PoolTime,
};

std::string op_name(OpKind kind);

/// Non-tensor arguments of an op.
struct OpAttrs {
  int axis = 0;
  double scalar = 0.0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  double eps = 0.0;
  const Array* mask = nullptr;  // Softmax/LogSoftmax: 1 keeps an entry, 0 drops it
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Propagates d(output)/d(node) to every recorded node reachable from output.
  void backward(const Tensor& output);
  void reset();
  std::size_t size() const { return records_.size(); }

  // Used by op implementations.
  struct Record {
    OpKind kind;
    std::vector<std::shared_ptr<Node>> inputs;
    std::shared_ptr<Node> output;
    std::function<void()> backward;
  };
  void record(Record r) { records_.push_back(std::move(r)); }

  static Tape* active();

 private:
  friend class TapeScope;
  std::vector<Record> records_;
  bool consumed_ = false;
};

/// Makes a tape the active one for the current thread until destruction.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspends recording for the current thread (eval-mode forward passes).
class NoTapeScope {
 public:
  NoTapeScope();
  ~NoTapeScope();
  NoTapeScope(const NoTapeScope&) = delete;
  NoTapeScope& operator=(const NoTapeScope&) = delete;

 private:
  Tape* previous_;
};

Tensor apply(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

Tensor matmul(const Tensor& a, const Tensor& b);
// Elementwise with broadcasting of unit rows/columns.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// Adds a 1 x c vector to every row of an r x c matrix.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols);
/// Reduction over an axis: axis 0 collapses rows (1 x c), axis 1 collapses columns (r x 1).
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor softmax(const Tensor& a, int axis, const Array* mask = nullptr);
Tensor log_softmax(const Tensor& a, int axis, const Array* mask = nullptr);
Tensor squared_norm(const Tensor& a);
/// Per-row (x - mean) / (std + eps), std being the population standard deviation.
Tensor normalize_rows(const Tensor& a, double eps);
/// Per-column (x - mean) / sqrt(var + eps) over the rows (batch-norm core).
Tensor standardize_cols(const Tensor& a, double eps);
Tensor l2_normalize_rows(const Tensor& a);
/// weights: B x T, stacked: (T*B) x C with row t*B + b holding step t of item b.
/// Returns B x C with row b = sum_t weights(b,t) * stacked(t*B + b).
Tensor pool_time(const Tensor& weights, const Tensor& stacked);

/// Max over coordinates of |analytic - central| / max(1, |central|) for a
/// scalar function of one parameter tensor.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor params,
                               double step);

/// Same check over several parameter tensors jointly.
double finite_difference_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                               double step);

}  // namespace seqmetric
