#include "seqmetric/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace seqmetric {

std::string shape_str(const Shape& s) {
  return "[" + std::to_string(s[0]) + "x" + std::to_string(s[1]) + "]";
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::runtime_error("op '" + op + "': shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& what)
    : std::runtime_error("op '" + op + "': " + what) {}

// ---------------------------------------------------------------------------
// Array

Array::Array(std::size_t rows, std::size_t cols, double fill)
    : shape_{rows, cols}, data_(rows * cols, fill) {}

Array::Array(std::size_t rows, std::size_t cols, std::vector<double> values)
    : shape_{rows, cols}, data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("array", "expected " + std::to_string(rows * cols) + " values, got " +
                                  std::to_string(data_.size()));
  }
}

Array Array::row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Array(1, n, std::move(v));
}

Array Array::identity(std::size_t n) {
  Array a(n, n);
  for (std::size_t i = 0; i < n; ++i) a(i, i) = 1.0;
  return a;
}

double Array::item() const {
  if (data_.size() != 1) throw ShapeError("item", "array " + shape_str(shape_) + " is not a scalar");
  return data_[0];
}

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Array::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

// ---------------------------------------------------------------------------
// Tensor / Tape

Tensor::Tensor(Array value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Array Tensor::grad() const {
  if (node_->grad.empty()) return Array(rows(), cols());
  return node_->grad;
}

namespace {

thread_local Tape* g_active_tape = nullptr;

Array& grad_of(Node& n) {
  if (n.grad.empty()) n.grad = Array(n.value.rows(), n.value.cols());
  return n.grad;
}

}  // namespace

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoTapeScope::NoTapeScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoTapeScope::~NoTapeScope() { g_active_tape = previous_; }

void Tape::backward(const Tensor& output) {
  if (!output.defined()) throw TapeError("backward: undefined output");
  if (output.value().size() != 1) {
    throw TapeError("backward: output must be a scalar, got " + shape_str(output.shape()));
  }
  if (consumed_) throw TapeError("backward: tape already consumed; call reset() first");
  if (!output.requires_grad()) {
    throw TapeError("backward: output was not produced under an active tape");
  }
  consumed_ = true;
  grad_of(*output.node())[0] += 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->output->grad.empty()) continue;
    it->backward();
  }
}

void Tape::reset() {
  records_.clear();
  consumed_ = false;
}

std::string op_name(OpKind kind) {
  switch (kind) {
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::AddRow: return "add_row";
    case OpKind::Neg: return "neg";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::Square: return "square";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::SumAll: return "sum_all";
    case OpKind::MeanAll: return "mean_all";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSoftmax: return "log_softmax";
    case OpKind::SquaredNorm: return "squared_norm";
    case OpKind::NormalizeRows: return "normalize_rows";
    case OpKind::StandardizeCols: return "standardize_cols";
    case OpKind::L2NormalizeRows: return "l2_normalize_rows";
    case OpKind::PoolTime: return "pool_time";
  }
  return "unknown";
}

namespace {

using NodePtr = Node*;

// Wraps a forward result; when recording, make_backward(out, inputs) must
// return the closure that accumulates input gradients from out->grad.
template <class MakeBackward>
Tensor finish(OpKind kind, Array value, std::initializer_list<const Tensor*> inputs,
              MakeBackward&& make_backward) {
  Tape* tape = Tape::active();
  bool record = false;
  if (tape != nullptr) {
    for (const Tensor* t : inputs) record = record || t->requires_grad();
  }
  Tensor out(std::move(value), record);
  if (!record) return out;
  Tape::Record rec;
  rec.kind = kind;
  std::vector<NodePtr> raw;
  for (const Tensor* t : inputs) {
    rec.inputs.push_back(t->node());
    raw.push_back(t->node().get());
  }
  rec.output = out.node();
  rec.backward = make_backward(out.node().get(), std::move(raw));
  tape->record(std::move(rec));
  return out;
}

Tensor finish_many(OpKind kind, Array value, std::span<const Tensor> inputs,
                   const std::function<std::function<void()>(NodePtr, std::vector<NodePtr>)>&
                       make_backward) {
  Tape* tape = Tape::active();
  bool record = false;
  if (tape != nullptr) {
    for (const Tensor& t : inputs) record = record || t.requires_grad();
  }
  Tensor out(std::move(value), record);
  if (!record) return out;
  Tape::Record rec;
  rec.kind = kind;
  std::vector<NodePtr> raw;
  for (const Tensor& t : inputs) {
    rec.inputs.push_back(t.node());
    raw.push_back(t.node().get());
  }
  rec.output = out.node();
  rec.backward = make_backward(out.node().get(), std::move(raw));
  tape->record(std::move(rec));
  return out;
}

std::size_t bdim(const std::string& op, std::size_t a, std::size_t b, const Shape& sa,
                 const Shape& sb) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw ShapeError(op, sa, sb);
}

enum class Bin { Add, Sub, Mul, Div };

Tensor binary(OpKind kind, Bin bin, const Tensor& a, const Tensor& b) {
  const std::string name = op_name(kind);
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::size_t rows = bdim(name, sa[0], sb[0], sa, sb);
  const std::size_t cols = bdim(name, sa[1], sb[1], sa, sb);
  const Array& av = a.value();
  const Array& bv = b.value();
  const bool ar = sa[0] == 1, ac = sa[1] == 1, br = sb[0] == 1, bc = sb[1] == 1;
  Array out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double x = av(ar ? 0 : i, ac ? 0 : j);
      const double y = bv(br ? 0 : i, bc ? 0 : j);
      double v = 0.0;
      switch (bin) {
        case Bin::Add: v = x + y; break;
        case Bin::Sub: v = x - y; break;
        case Bin::Mul: v = x * y; break;
        case Bin::Div: v = x / y; break;
      }
      out(i, j) = v;
    }
  }
  return finish(kind, std::move(out), {&a, &b}, [=](NodePtr o, std::vector<NodePtr> in) {
    return [=]() {
      const Array& g = o->grad;
      Node* na = in[0];
      Node* nb = in[1];
      const Array& x = na->value;
      const Array& y = nb->value;
      if (na->requires_grad) {
        Array& ga = grad_of(*na);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t bi = br ? 0 : i, bj = bc ? 0 : j;
            double d = g(i, j);
            if (bin == Bin::Mul) d *= y(bi, bj);
            if (bin == Bin::Div) d /= y(bi, bj);
            ga(ar ? 0 : i, ac ? 0 : j) += d;
          }
        }
      }
      if (nb->requires_grad) {
        Array& gb = grad_of(*nb);
        for (std::size_t i = 0; i < rows; ++i) {
          for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t ai = ar ? 0 : i, aj = ac ? 0 : j;
            const std::size_t bi = br ? 0 : i, bj = bc ? 0 : j;
            double d = g(i, j);
            switch (bin) {
              case Bin::Add: break;
              case Bin::Sub: d = -d; break;
              case Bin::Mul: d *= x(ai, aj); break;
              case Bin::Div: {
                const double yy = y(bi, bj);
                d = -d * x(ai, aj) / (yy * yy);
                break;
              }
            }
            gb(bi, bj) += d;
          }
        }
      }
    };
  });
}

// Elementwise unary op. deriv(x, y) gives dy/dx from input x and output y.
template <class Fwd, class Deriv>
Tensor unary(OpKind kind, const Tensor& a, Fwd fwd, Deriv deriv) {
  const Array& av = a.value();
  Array out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return finish(kind, std::move(out), {&a}, [=](NodePtr o, std::vector<NodePtr> in) {
    return [=]() {
      Node* n = in[0];
      if (!n->requires_grad) return;
      Array& ga = grad_of(*n);
      const Array& g = o->grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(n->value[i], o->value[i]);
    };
  });
}

double stable_sigmoid(double x) {
  if (x >= 0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

// Visits the groups of a softmax along `axis`: calls fn(base, stride, count).
template <class Fn>
void for_each_group(const Shape& s, int axis, Fn fn) {
  if (axis == 1) {
    for (std::size_t r = 0; r < s[0]; ++r) fn(r * s[1], std::size_t{1}, s[1]);
  } else {
    for (std::size_t c = 0; c < s[1]; ++c) fn(c, s[1], s[0]);
  }
}

void check_axis(const std::string& op, int axis) {
  if (axis != 0 && axis != 1) throw ShapeError(op, "axis must be 0 or 1, got " + std::to_string(axis));
}

Tensor softmax_impl(OpKind kind, const Tensor& a, int axis, const Array* mask) {
  const std::string name = op_name(kind);
  check_axis(name, axis);
  if (mask != nullptr && mask->shape() != a.shape()) throw ShapeError(name, a.shape(), mask->shape());
  const bool logmode = kind == OpKind::LogSoftmax;
  const Array& x = a.value();
  Array out(x.rows(), x.cols());
  // Softmax probabilities, kept for the log-softmax backward pass.
  Array prob(x.rows(), x.cols());
  auto keep = [mask](std::size_t idx) { return mask == nullptr || (*mask)[idx] != 0.0; };
  for_each_group(x.shape(), axis, [&](std::size_t base, std::size_t stride, std::size_t count) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t idx = base + k * stride;
      if (keep(idx)) mx = std::max(mx, x[idx]);
    }
    if (!std::isfinite(mx)) return;  // fully masked group stays zero
    double total = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t idx = base + k * stride;
      if (keep(idx)) total += std::exp(x[idx] - mx);
    }
    const double log_total = std::log(total);
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t idx = base + k * stride;
      if (!keep(idx)) continue;
      const double e = std::exp(x[idx] - mx);
      prob[idx] = e / total;
      out[idx] = logmode ? (x[idx] - mx) - log_total : e / total;
    }
  });
  Array mask_copy = mask != nullptr ? *mask : Array();
  const Shape shape = x.shape();
  return finish(kind, std::move(out), {&a},
                [=, prob = std::move(prob)](NodePtr o, std::vector<NodePtr> in) {
                  return [=]() {
                    Node* n = in[0];
                    if (!n->requires_grad) return;
                    Array& ga = grad_of(*n);
                    const Array& g = o->grad;
                    auto keep2 = [&](std::size_t idx) {
                      return mask_copy.empty() || mask_copy[idx] != 0.0;
                    };
                    for_each_group(shape, axis, [&](std::size_t base, std::size_t stride,
                                                    std::size_t count) {
                      double dot = 0.0;
                      for (std::size_t k = 0; k < count; ++k) {
                        const std::size_t idx = base + k * stride;
                        if (!keep2(idx)) continue;
                        dot += logmode ? g[idx] : g[idx] * prob[idx];
                      }
                      for (std::size_t k = 0; k < count; ++k) {
                        const std::size_t idx = base + k * stride;
                        if (!keep2(idx)) continue;
                        ga[idx] += logmode ? g[idx] - prob[idx] * dot : prob[idx] * (g[idx] - dot);
                      }
                    });
                  };
                });
}

}  // namespace

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.cols() != bv.rows()) throw ShapeError("matmul", av.shape(), bv.shape());
  const std::size_t n = av.rows(), k = av.cols(), m = bv.cols();
  Array out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av(i, p);
      const double* brow = &bv.storage()[p * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += aip * brow[j];
    }
  }
  return finish(OpKind::MatMul, std::move(out), {&a, &b}, [=](NodePtr o, std::vector<NodePtr> in) {
    return [=]() {
      const Array& g = o->grad;
      Node* na = in[0];
      Node* nb = in[1];
      if (na->requires_grad) {
        // dA = G * B^T
        Array& ga = grad_of(*na);
        const Array& bb = nb->value;
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = &g.storage()[i * m];
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = &bb.storage()[p * m];
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
            ga(i, p) += acc;
          }
        }
      }
      if (nb->requires_grad) {
        // dB = A^T * G
        Array& gb = grad_of(*nb);
        const Array& aa = na->value;
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = &g.storage()[i * m];
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = aa(i, p);
            if (aip == 0.0) continue;
            double* gbrow = &gb.storage()[p * m];
            for (std::size_t j = 0; j < m; ++j) gbrow[j] += aip * grow[j];
          }
        }
      }
    };
  });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(OpKind::Add, Bin::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(OpKind::Sub, Bin::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(OpKind::Mul, Bin::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(OpKind::Div, Bin::Div, a, b); }

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row", a.shape(), row.shape());
  return binary(OpKind::AddRow, Bin::Add, a, row);
}

Tensor neg(const Tensor& a) {
  return unary(OpKind::Neg, a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(OpKind::Scale, a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(OpKind::AddScalar, a, [s](double x) { return x + s; },
               [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(OpKind::Sigmoid, a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(OpKind::Tanh, a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(OpKind::Relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(OpKind::Exp, a, [](double x) { return std::exp(x); },
               [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  for (double v : a.value().values()) {
    if (v < 0.0) throw DomainError("op 'log': negative input " + std::to_string(v));
  }
  return unary(OpKind::Log, a, [](double x) { return std::log(x); },
               [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
  for (double v : a.value().values()) {
    if (v < 0.0) throw DomainError("op 'sqrt': negative input " + std::to_string(v));
  }
  // The derivative at 0 is taken as 0 (subgradient of the clamped root).
  return unary(OpKind::Sqrt, a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary(OpKind::Square, a, [](double x) { return x * x; },
               [](double x, double) { return 2.0 * x; });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  check_axis("concat", axis);
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const Shape first = parts[0].shape();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const std::size_t other = axis == 0 ? p.cols() : p.rows();
    if (other != (axis == 0 ? first[1] : first[0])) throw ShapeError("concat", first, p.shape());
    total += axis == 0 ? p.rows() : p.cols();
  }
  const std::size_t rows = axis == 0 ? total : first[0];
  const std::size_t cols = axis == 0 ? first[1] : total;
  Array out(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    offsets.push_back(off);
    const Array& v = p.value();
    for (std::size_t i = 0; i < v.rows(); ++i) {
      for (std::size_t j = 0; j < v.cols(); ++j) {
        if (axis == 0) out(off + i, j) = v(i, j);
        else out(i, off + j) = v(i, j);
      }
    }
    off += axis == 0 ? v.rows() : v.cols();
  }
  return finish_many(OpKind::Concat, std::move(out), parts,
                     [=](NodePtr o, std::vector<NodePtr> in) -> std::function<void()> {
                       return [=]() {
                         const Array& g = o->grad;
                         for (std::size_t p = 0; p < in.size(); ++p) {
                           Node* n = in[p];
                           if (!n->requires_grad) continue;
                           Array& gp = grad_of(*n);
                           for (std::size_t i = 0; i < gp.rows(); ++i) {
                             for (std::size_t j = 0; j < gp.cols(); ++j) {
                               gp(i, j) += axis == 0 ? g(offsets[p] + i, j) : g(i, offsets[p] + j);
                             }
                           }
                         }
                       };
                     });
}

Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  check_axis("slice", axis);
  const std::size_t extent = axis == 0 ? a.rows() : a.cols();
  if (begin >= end || end > extent) {
    throw ShapeError("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                  ") out of bounds for " + shape_str(a.shape()) + " along axis " +
                                  std::to_string(axis));
  }
  const Array& v = a.value();
  const std::size_t rows = axis == 0 ? end - begin : v.rows();
  const std::size_t cols = axis == 0 ? v.cols() : end - begin;
  Array out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out(i, j) = axis == 0 ? v(begin + i, j) : v(i, begin + j);
    }
  }
  return finish(OpKind::Slice, std::move(out), {&a}, [=](NodePtr o, std::vector<NodePtr> in) {
    return [=]() {
      Node* n = in[0];
      if (!n->requires_grad) return;
      Array& ga = grad_of(*n);
      const Array& g = o->grad;
      for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) {
          if (axis == 0) ga(begin + i, j) += g(i, j);
          else ga(i, begin + j) += g(i, j);
        }
      }
    };
  });
}

Tensor transpose(const Tensor& a) {
  const Array& v = a.value();
  Array out(v.cols(), v.rows());
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) out(j, i) = v(i, j);
  return finish(OpKind::Transpose, std::move(out), {&a}, [](NodePtr o, std::vector<NodePtr> in) {
    return [=]() {
      Node* n = in[0];
      if (!n->requires_grad) return;
      Array& ga = grad_of(*n);
      const Array& g = o->grad;
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g(j, i);
    };
  });
}

Tensor reshape(const Tensor& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.value().size()) {
    throw ShapeError("reshape", a.shape(), Shape{rows, cols});
  }
  Array out(rows, cols, a.value().storage());
  return finish(OpKind::Reshape, std::move(out), {&a}, [](NodePtr o, std::vector<NodePtr> in) {
    return [=]() {
      Node* n = in[0];
      if (!n->requires_grad) return;
      Array& ga = grad_of(*n);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o->grad[i];
    };
  });
}

namespace {

Tensor reduce_axis(OpKind kind, const Tensor& a, int axis, bool average) {
  check_axis(op_name(kind), axis);
  const Array& v = a.value();
  const std::size_t rows = axis == 0 ? 1 : v.rows();
  const std::size_t cols = axis == 0 ? v.cols() : 1;
  const double factor = average ? 1.0 / static_cast<double>(axis == 0 ? v.rows() : v.cols()) : 1.0;
  Array out(rows, cols);
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j) out(axis == 0 ? 0 : i, axis == 0 ? j : 0) += v(i, j);
  if (average)
    for (double& x : out.values()) x *= factor;
  return finish(kind, std::move(out), {&a}, [=](NodePtr o, std::vector<NodePtr> in) {
    return [=]() {
      Node* n = in[0];
      if (!n->requires_grad) return;
      Array& ga = grad_of(*n);
      const Array& g = o->grad;
      for (std::size_t i = 0; i < ga.rows(); ++i)
        for (std::size_t j = 0; j < ga.cols(); ++j)
          ga(i, j) += factor * g(axis == 0 ? 0 : i, axis == 0 ? j : 0);
    };
  });
}

Tensor reduce_all(OpKind kind, const Tensor& a, bool average) {
  const Array& v = a.value();
  double total = 0.0;
  for (double x : v.values()) total += x;
  const double factor = average ? 1.0 / static_cast<double>(v.size()) : 1.0;
  return finish(kind, Array::scalar(total * factor), {&a}, [=](NodePtr o, std::vector<NodePtr> in) {
    return [=]() {
      Node* n = in[0];
      if (!n->requires_grad) return;
      Array& ga = grad_of(*n);
      const double g = o->grad[0] * factor;
      for (double& x : ga.values()) x += g;
    };
  });
}

}  // namespace

Tensor sum(const Tensor& a, int axis) { return reduce_axis(OpKind::Sum, a, axis, false); }
Tensor mean(const Tensor& a, int axis) { return reduce_axis(OpKind::Mean, a, axis, true); }
Tensor sum_all(const Tensor& a) { return reduce_all(OpKind::SumAll, a, false); }
Tensor mean_all(const Tensor& a) { return reduce_all(OpKind::MeanAll, a, true); }

Tensor softmax(const Tensor& a, int axis, const Array* mask) {
  return softmax_impl(OpKind::Softmax, a, axis, mask);
}

Tensor log_softmax(const Tensor& a, int axis, const Array* mask) {
  return softmax_impl(OpKind::LogSoftmax, a, axis, mask);
}

Tensor squared_norm(const Tensor& a) {
  double total = 0.0;
  for (double x : a.value().values()) total += x * x;
  return finish(OpKind::SquaredNorm, Array::scalar(total), {&a},
                [](NodePtr o, std::vector<NodePtr> in) {
                  return [=]() {
                    Node* n = in[0];
                    if (!n->requires_grad) return;
                    Array& ga = grad_of(*n);
                    const double g = o->grad[0];
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * n->value[i] * g;
                  };
                });
}

Tensor normalize_rows(const Tensor& a, double eps) {
  const Array& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  const double h = static_cast<double>(cols);
  Array out(rows, cols);
  std::vector<double> sd(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double m = 0.0;
    for (std::size_t j = 0; j < cols; ++j) m += x(i, j);
    m /= h;
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (x(i, j) - m) * (x(i, j) - m);
    sd[i] = std::sqrt(var / h);
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = (x(i, j) - m) / (sd[i] + eps);
  }
  return finish(OpKind::NormalizeRows, std::move(out), {&a}, [=](NodePtr o, std::vector<NodePtr> in) {
    return [=]() {
      Node* n = in[0];
      if (!n->requires_grad) return;
      Array& ga = grad_of(*n);
      const Array& g = o->grad;
      const Array& y = o->value;
      for (std::size_t i = 0; i < rows; ++i) {
        const double s = sd[i] + eps;
        double gmean = 0.0, gu = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
          gmean += g(i, j);
          gu += g(i, j) * y(i, j) * s;  // y * s == x - mean
        }
        gmean /= h;
        for (std::size_t j = 0; j < cols; ++j) {
          double d = (g(i, j) - gmean) / s;
          if (sd[i] > 0.0) d -= gu / (s * s) * (y(i, j) * s) / (h * sd[i]);
          ga(i, j) += d;
        }
      }
    };
  });
}

Tensor standardize_cols(const Tensor& a, double eps) {
  const Array& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  const double nrows = static_cast<double>(rows);
  Array out(rows, cols);
  std::vector<double> sd(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    double m = 0.0;
    for (std::size_t i = 0; i < rows; ++i) m += x(i, j);
    m /= nrows;
    double var = 0.0;
    for (std::size_t i = 0; i < rows; ++i) var += (x(i, j) - m) * (x(i, j) - m);
    sd[j] = std::sqrt(var / nrows + eps);
    for (std::size_t i = 0; i < rows; ++i) out(i, j) = (x(i, j) - m) / sd[j];
  }
  return finish(OpKind::StandardizeCols, std::move(out), {&a},
                [=](NodePtr o, std::vector<NodePtr> in) {
                  return [=]() {
                    Node* n = in[0];
                    if (!n->requires_grad) return;
                    Array& ga = grad_of(*n);
                    const Array& g = o->grad;
                    const Array& y = o->value;
                    for (std::size_t j = 0; j < cols; ++j) {
                      double gmean = 0.0, gy = 0.0;
                      for (std::size_t i = 0; i < rows; ++i) {
                        gmean += g(i, j);
                        gy += g(i, j) * y(i, j);
                      }
                      gmean /= nrows;
                      gy /= nrows;
                      for (std::size_t i = 0; i < rows; ++i) {
                        ga(i, j) += (g(i, j) - gmean - y(i, j) * gy) / sd[j];
                      }
                    }
                  };
                });
}

Tensor l2_normalize_rows(const Tensor& a) {
  const Array& x = a.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  Array out(rows, cols);
  std::vector<double> norms(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += x(i, j) * x(i, j);
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0)) throw DomainError("op 'l2_normalize_rows': zero-norm row " + std::to_string(i));
    for (std::size_t j = 0; j < cols; ++j) out(i, j) = x(i, j) / norms[i];
  }
  return finish(OpKind::L2NormalizeRows, std::move(out), {&a},
                [=](NodePtr o, std::vector<NodePtr> in) {
                  return [=]() {
                    Node* n = in[0];
                    if (!n->requires_grad) return;
                    Array& ga = grad_of(*n);
                    const Array& g = o->grad;
                    const Array& y = o->value;
                    for (std::size_t i = 0; i < rows; ++i) {
                      double gy = 0.0;
                      for (std::size_t j = 0; j < cols; ++j) gy += g(i, j) * y(i, j);
                      for (std::size_t j = 0; j < cols; ++j)
                        ga(i, j) += (g(i, j) - y(i, j) * gy) / norms[i];
                    }
                  };
                });
}

Tensor pool_time(const Tensor& weights, const Tensor& stacked) {
  const Array& w = weights.value();
  const Array& s = stacked.value();
  const std::size_t batch = w.rows(), steps = w.cols(), width = s.cols();
  if (s.rows() != batch * steps) throw ShapeError("pool_time", w.shape(), s.shape());
  Array out(batch, width);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < batch; ++b) {
      const double wt = w(b, t);
      const double* srow = &s.storage()[(t * batch + b) * width];
      double* orow = &out(b, 0);
      for (std::size_t c = 0; c < width; ++c) orow[c] += wt * srow[c];
    }
  }
  return finish(OpKind::PoolTime, std::move(out), {&weights, &stacked},
                [=](NodePtr o, std::vector<NodePtr> in) {
                  return [=]() {
                    const Array& g = o->grad;
                    Node* nw = in[0];
                    Node* ns = in[1];
                    for (std::size_t t = 0; t < steps; ++t) {
                      for (std::size_t b = 0; b < batch; ++b) {
                        const std::size_t srow = (t * batch + b) * width;
                        const double* grow = &g.storage()[b * width];
                        if (nw->requires_grad) {
                          double acc = 0.0;
                          for (std::size_t c = 0; c < width; ++c) acc += grow[c] * ns->value[srow + c];
                          grad_of(*nw)(b, t) += acc;
                        }
                        if (ns->requires_grad) {
                          Array& gs = grad_of(*ns);
                          const double wt = nw->value(b, t);
                          for (std::size_t c = 0; c < width; ++c) gs[srow + c] += wt * grow[c];
                        }
                      }
                    }
                  };
                });
}

Tensor apply(OpKind kind, std::span<const Tensor> in, const OpAttrs& at) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(op_name(kind), "expected " + std::to_string(n) + " inputs, got " +
                                          std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::MatMul: need(2); return matmul(in[0], in[1]);
    case OpKind::Add: need(2); return add(in[0], in[1]);
    case OpKind::Sub: need(2); return sub(in[0], in[1]);
    case OpKind::Mul: need(2); return mul(in[0], in[1]);
    case OpKind::Div: need(2); return div(in[0], in[1]);
    case OpKind::AddRow: need(2); return add_row(in[0], in[1]);
    case OpKind::Neg: need(1); return neg(in[0]);
    case OpKind::Scale: need(1); return scale(in[0], at.scalar);
    case OpKind::AddScalar: need(1); return add_scalar(in[0], at.scalar);
    case OpKind::Sigmoid: need(1); return sigmoid(in[0]);
    case OpKind::Tanh: need(1); return tanh(in[0]);
    case OpKind::Relu: need(1); return relu(in[0]);
    case OpKind::Exp: need(1); return exp(in[0]);
    case OpKind::Log: need(1); return log(in[0]);
    case OpKind::Sqrt: need(1); return sqrt(in[0]);
    case OpKind::Square: need(1); return square(in[0]);
    case OpKind::Concat: return concat(in, at.axis);
    case OpKind::Slice: need(1); return slice(in[0], at.axis, at.begin, at.end);
    case OpKind::Transpose: need(1); return transpose(in[0]);
    case OpKind::Reshape: need(1); return reshape(in[0], at.rows, at.cols);
    case OpKind::Sum: need(1); return sum(in[0], at.axis);
    case OpKind::Mean: need(1); return mean(in[0], at.axis);
    case OpKind::SumAll: need(1); return sum_all(in[0]);
    case OpKind::MeanAll: need(1); return mean_all(in[0]);
    case OpKind::Softmax: need(1); return softmax(in[0], at.axis, at.mask);
    case OpKind::LogSoftmax: need(1); return log_softmax(in[0], at.axis, at.mask);
    case OpKind::SquaredNorm: need(1); return squared_norm(in[0]);
    case OpKind::NormalizeRows: need(1); return normalize_rows(in[0], at.eps);
    case OpKind::StandardizeCols: need(1); return standardize_cols(in[0], at.eps);
    case OpKind::L2NormalizeRows: need(1); return l2_normalize_rows(in[0]);
    case OpKind::PoolTime: need(2); return pool_time(in[0], in[1]);
  }
  throw ShapeError("apply", "unknown op kind");
}

// ---------------------------------------------------------------------------
// Finite differences

double finite_difference_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                               double step) {
  if (!(step > 0.0)) throw DomainError("finite_difference_check: step must be positive");
  std::vector<Array> analytic;
  {
    for (Tensor& p : params) p.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor out = f();
    if (!std::isfinite(out.item())) throw DomainError("finite_difference_check: non-finite f");
    if (out.requires_grad()) tape.backward(out);
    for (Tensor& p : params) analytic.push_back(p.grad());
  }
  NoTapeScope untaped;
  auto eval = [&]() {
    const double v = f().item();
    if (!std::isfinite(v)) throw DomainError("finite_difference_check: non-finite f");
    return v;
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Array& values = params[k].mutable_value();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = eval();
      values[i] = saved - step;
      const double down = eval();
      values[i] = saved;
      const double central = (up - down) / (2.0 * step);
      const double err = std::abs(analytic[k][i] - central) / std::max(1.0, std::abs(central));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor params,
                               double step) {
  std::array<Tensor, 1> ps{params};
  return finite_difference_check([&]() { return f(ps[0]); }, std::span<Tensor>(ps), step);
}

}  // namespace seqmetric
