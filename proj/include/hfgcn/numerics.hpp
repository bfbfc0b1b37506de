// Copyright 2026 The HFGCN Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense row-major arrays with tape-based reverse-mode differentiation,
// plus the Adam optimizer and a central-difference gradient checker.
//
// A Value is a shared handle: copies alias the same buffers. Parameters are
// leaf Values created with requires_grad; every op whose inputs require
// gradients appends a backward closure to the Tape it was given.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hfgcn/errors.hpp"

namespace hfgcn {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

class Value {
 public:
  Value() = default;

  static Value zeros(Shape shape, bool requires_grad = false) {
    std::vector<double> data(shape_size(shape), 0.0);
    return Value(std::move(shape), std::move(data), requires_grad);
  }

  static Value from(Shape shape, std::vector<double> data, bool requires_grad = false) {
    if (shape_size(shape) != data.size()) {
      throw DimensionError("Value: shape " + shape_str(shape) + " holds " +
                           std::to_string(shape_size(shape)) + " entries, got " +
                           std::to_string(data.size()));
    }
    return Value(std::move(shape), std::move(data), requires_grad);
  }

  static Value matrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                      bool requires_grad = false) {
    return from({rows, cols}, std::move(data), requires_grad);
  }

  static Value scalar(double x) { return from({}, {x}); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  // Rank 0 and rank 1 values are viewed as a single row.
  std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const {
    return rank() == 2 ? node_->shape[1] : (rank() == 1 ? node_->shape[0] : 1);
  }

  std::span<const double> data() const { return node_->data; }
  std::span<double> data() { return node_->data; }
  double at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ContractError("item() on non-scalar " + shape_str(shape()));
    return node_->data[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (on) node_->grad.assign(size(), 0.0);
    else node_->grad.clear();
  }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad() { return node_->grad; }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

  bool same_as(const Value& other) const noexcept { return node_ == other.node_; }

  // Deep copy of shape and data; the copy does not share buffers.
  Value clone(bool requires_grad = false) const {
    return Value(node_->shape, node_->data, requires_grad);
  }

 private:
  struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  Value(Shape shape, std::vector<double> data, bool requires_grad)
      : node_(std::make_shared<Node>()) {
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    if (requires_grad) set_requires_grad(true);
  }

  std::shared_ptr<Node> node_;
};

// Ordered record of the differentiable operations executed so far.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;

  // A non-recording tape evaluates ops without keeping backward closures.
  static Tape inference() {
    Tape t;
    t.recording_ = false;
    return t;
  }

  bool recording() const noexcept { return recording_; }

  // Registers `out` as produced from `inputs`. When no input needs a
  // gradient nothing is recorded and `out` stays a constant.
  Value record(Value out, std::initializer_list<Value> inputs, BackwardFn fn) {
    bool needed = false;
    for (const auto& in : inputs) needed = needed || in.requires_grad();
    return record_if(std::move(out), needed, std::move(fn));
  }

  Value record(Value out, std::span<const Value> inputs, BackwardFn fn) {
    bool needed = false;
    for (const auto& in : inputs) needed = needed || in.requires_grad();
    return record_if(std::move(out), needed, std::move(fn));
  }

  std::size_t size() const noexcept { return ops_.size(); }
  void clear() { ops_.clear(); }

  // Zeroes every intermediate gradient buffer, seeds d(loss)/d(loss) = 1 and
  // runs the recorded closures in reverse. Leaf gradients accumulate; the
  // caller zeroes parameter gradients between updates.
  void backward(Value loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ContractError("backward: loss must be a scalar, got " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    if (!loss.requires_grad()) return;
    for (auto& op : ops_) op.output.zero_grad();
    loss.grad()[0] += 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) it->backward();
  }

 private:
  struct Op {
    Value output;
    BackwardFn backward;
  };

  Value record_if(Value out, bool needed, BackwardFn fn) {
    if (!needed || !recording_) return out;
    out.set_requires_grad(true);
    ops_.push_back(Op{out, std::move(fn)});
    return out;
  }

  std::vector<Op> ops_;
  bool recording_ = true;
};

namespace detail {

inline void require_matrix(const Value& v, const char* op) {
  if (!v.defined() || v.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " +
                         (v.defined() ? shape_str(v.shape()) : std::string("undefined")));
  }
}

inline void require_same_shape(const Value& a, const Value& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// C[m×n] += A[m×k] · B[k×n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]ᵀ
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

// C[m×n] += A[k×m]ᵀ · B[k×n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
                    std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Value matmul(Tape& tape, const Value& a, const Value& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Value out = Value::zeros({m, n});
  detail::gemm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  return tape.record(out, {a, b}, [a = a, b = b, out, m, k, n]() mutable {
    const double* g = out.grad().data();
    if (a.requires_grad()) detail::gemm_nt(g, b.data().data(), a.grad().data(), m, n, k);
    if (b.requires_grad()) detail::gemm_tn(a.data().data(), g, b.grad().data(), m, k, n);
  });
}

// a · bᵀ, for weights stored output-major (out_dim × in_dim).
inline Value matmul_nt(Tape& tape, const Value& a, const Value& b) {
  detail::require_matrix(a, "matmul_nt");
  detail::require_matrix(b, "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw DimensionError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  }
  Value out = Value::zeros({m, n});
  detail::gemm_nt(a.data().data(), b.data().data(), out.data().data(), m, k, n);
  return tape.record(out, {a, b}, [a = a, b = b, out, m, k, n]() mutable {
    const double* g = out.grad().data();
    if (a.requires_grad()) detail::gemm_nn(g, b.data().data(), a.grad().data(), m, n, k);
    if (b.requires_grad()) detail::gemm_tn(g, a.data().data(), b.grad().data(), m, n, k);
  });
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Value add(Tape& tape, const Value& a, const Value& b) {
  detail::require_same_shape(a, b, "add");
  Value out = Value::zeros(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  return tape.record(out, {a, b}, [a = a, b = b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
    if (b.requires_grad()) for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i];
  });
}

inline Value sub(Tape& tape, const Value& a, const Value& b) {
  detail::require_same_shape(a, b, "sub");
  Value out = Value::zeros(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  return tape.record(out, {a, b}, [a = a, b = b, out]() mutable {
    auto g = out.grad();
    if (a.requires_grad()) for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i];
    if (b.requires_grad()) for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] -= g[i];
  });
}

// Hadamard product.
inline Value mul(Tape& tape, const Value& a, const Value& b) {
  detail::require_same_shape(a, b, "mul");
  Value out = Value::zeros(a.shape());
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  return tape.record(out, {a, b}, [a = a, b = b, out]() mutable {
    auto g = out.grad();
    auto x = a.data(), y = b.data();
    if (a.requires_grad()) for (std::size_t i = 0; i < g.size(); ++i) a.grad()[i] += g[i] * y[i];
    if (b.requires_grad()) for (std::size_t i = 0; i < g.size(); ++i) b.grad()[i] += g[i] * x[i];
  });
}

// alpha·x + beta
inline Value affine(Tape& tape, const Value& x, double alpha, double beta = 0.0) {
  Value out = Value::zeros(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = alpha * in[i] + beta;
  return tape.record(out, {x}, [x = x, out, alpha]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += alpha * g[i];
  });
}

inline Value scale(Tape& tape, const Value& x, double factor) { return affine(tape, x, factor); }

// x[m×n] + bias[1×n] broadcast over rows.
inline Value add_row(Tape& tape, const Value& x, const Value& bias) {
  detail::require_matrix(x, "add_row");
  const std::size_t m = x.rows(), n = x.cols();
  if (bias.size() != n) {
    throw DimensionError("add_row: bias " + shape_str(bias.shape()) + " does not match " +
                         shape_str(x.shape()));
  }
  Value out = Value::zeros(x.shape());
  auto o = out.data();
  auto in = x.data(), b = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) o[i * n + j] = in[i * n + j] + b[j];
  return tape.record(out, {x, bias}, [x = x, bias = bias, out, m, n]() mutable {
    auto g = out.grad();
    if (x.requires_grad()) for (std::size_t i = 0; i < g.size(); ++i) x.grad()[i] += g[i];
    if (bias.requires_grad()) {
      auto gb = bias.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

inline Value sum(Tape& tape, const Value& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  Value out = Value::scalar(acc);
  return tape.record(out, {x}, [x = x, out]() mutable {
    const double g = out.grad()[0];
    for (double& gx : x.grad()) gx += g;
  });
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { kRelu, kTanh, kSigmoid };

inline Value elementwise(Tape& tape, const Value& x, Activation kind) {
  Value out = Value::zeros(x.shape());
  auto o = out.data();
  auto in = x.data();
  switch (kind) {
    case Activation::kRelu:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::tanh(in[i]);
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = detail::stable_sigmoid(in[i]);
      break;
  }
  return tape.record(out, {x}, [x = x, out, kind]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    auto y = out.data();
    auto in = x.data();
    switch (kind) {
      case Activation::kRelu:
        for (std::size_t i = 0; i < g.size(); ++i) if (in[i] > 0.0) gx[i] += g[i];
        break;
      case Activation::kTanh:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      case Activation::kSigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
    }
  });
}

inline Value relu(Tape& tape, const Value& x) { return elementwise(tape, x, Activation::kRelu); }
inline Value tanh(Tape& tape, const Value& x) { return elementwise(tape, x, Activation::kTanh); }
inline Value sigmoid(Tape& tape, const Value& x) {
  return elementwise(tape, x, Activation::kSigmoid);
}

// Row-wise softmax with max subtraction.
inline Value softmax_rows(Tape& tape, const Value& x) {
  detail::require_matrix(x, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (n == 0) throw DimensionError("softmax_rows: rows must be non-empty");
  Value out = Value::zeros(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = in.data() + i * n;
    double* dst = o.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (dst[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < n; ++j) dst[j] /= z;
  }
  return tape.record(out, {x}, [x = x, out, m, n]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    auto y = out.data();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Structural ops

// Concatenates matrices along axis 0 (rows) or 1 (columns).
inline Value concat(Tape& tape, std::span<const Value> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  if (axis > 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const auto& p : parts) detail::require_matrix(p, "concat");
  const std::size_t fixed = axis == 0 ? parts[0].cols() : parts[0].rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    const std::size_t other = axis == 0 ? p.cols() : p.rows();
    if (other != fixed) {
      throw DimensionError("concat: " + shape_str(p.shape()) + " does not match " +
                           shape_str(parts[0].shape()) + " off axis " + std::to_string(axis));
    }
    total += axis == 0 ? p.rows() : p.cols();
  }
  const std::size_t rows = axis == 0 ? total : fixed;
  const std::size_t cols = axis == 0 ? fixed : total;
  Value out = Value::zeros({rows, cols});
  auto o = out.data();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    auto src = p.data();
    if (axis == 0) {
      std::copy(src.begin(), src.end(), o.begin() + offset * cols);
      offset += p.rows();
    } else {
      const std::size_t pc = p.cols();
      for (std::size_t i = 0; i < rows; ++i)
        std::copy_n(src.begin() + i * pc, pc, o.begin() + i * cols + offset);
      offset += pc;
    }
  }
  std::vector<Value> held(parts.begin(), parts.end());
  return tape.record(out, parts, [held, out, axis, rows, cols]() mutable {
    auto g = out.grad();
    std::size_t offset = 0;
    for (auto& p : held) {
      if (axis == 0) {
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offset * cols + i];
        }
        offset += p.rows();
      } else {
        const std::size_t pc = p.cols();
        if (p.requires_grad()) {
          auto gp = p.grad();
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * cols + offset + j];
        }
        offset += pc;
      }
    }
  });
}

inline Value concat(Tape& tape, std::initializer_list<Value> parts, std::size_t axis) {
  return concat(tape, std::span<const Value>(parts.begin(), parts.size()), axis);
}

// Half-open range [begin, end) along axis 0 or 1.
inline Value slice(Tape& tape, const Value& x, std::size_t axis, std::size_t begin,
                   std::size_t end) {
  detail::require_matrix(x, "slice");
  const std::size_t m = x.rows(), n = x.cols();
  const std::size_t extent = axis == 0 ? m : n;
  if (axis > 1 || begin > end || end > extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()) + " on axis " +
                         std::to_string(axis));
  }
  const std::size_t rows = axis == 0 ? end - begin : m;
  const std::size_t cols = axis == 0 ? n : end - begin;
  Value out = Value::zeros({rows, cols});
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      o[i * cols + j] = axis == 0 ? in[(begin + i) * n + j] : in[i * n + begin + j];
  return tape.record(out, {x}, [x = x, out, axis, begin, rows, cols, n]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t at = axis == 0 ? (begin + i) * n + j : i * n + begin + j;
        gx[at] += g[i * cols + j];
      }
  });
}

// out[e] = x[index[e]]; repeated indices accumulate in backward.
inline Value gather_rows(Tape& tape, const Value& x, std::vector<std::size_t> index) {
  detail::require_matrix(x, "gather_rows");
  const std::size_t n = x.cols();
  Value out = Value::zeros({index.size(), n});
  auto o = out.data();
  auto in = x.data();
  for (std::size_t e = 0; e < index.size(); ++e) {
    if (index[e] >= x.rows()) {
      throw IndexError("gather_rows: row " + std::to_string(index[e]) + " out of range for " +
                       shape_str(x.shape()));
    }
    std::copy_n(in.begin() + index[e] * n, n, o.begin() + e * n);
  }
  return tape.record(out, {x}, [x = x, out, index = std::move(index), n]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (std::size_t e = 0; e < index.size(); ++e)
      for (std::size_t j = 0; j < n; ++j) gx[index[e] * n + j] += g[e * n + j];
  });
}

// out[i] = <a[i], b[i]> as an m×1 column.
inline Value row_dot(Tape& tape, const Value& a, const Value& b) {
  detail::require_matrix(a, "row_dot");
  detail::require_same_shape(a, b, "row_dot");
  const std::size_t m = a.rows(), n = a.cols();
  Value out = Value::zeros({m, 1});
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < n; ++j) acc += x[i * n + j] * y[i * n + j];
    o[i] = acc;
  }
  return tape.record(out, {a, b}, [a = a, b = b, out, m, n]() mutable {
    auto g = out.grad();
    auto x = a.data(), y = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i] * y[i * n + j];
    }
    if (b.requires_grad()) {
      auto gb = b.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[i * n + j] += g[i] * x[i * n + j];
    }
  });
}

// Softmax of an m×1 score column within groups: entries sharing
// segment[e] are normalized together.
inline Value segment_softmax(Tape& tape, const Value& scores, std::vector<std::size_t> segment,
                             std::size_t num_segments) {
  if (scores.size() != segment.size()) {
    throw DimensionError("segment_softmax: " + std::to_string(scores.size()) + " scores, " +
                         std::to_string(segment.size()) + " segment ids");
  }
  const std::size_t m = segment.size();
  std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
  auto s = scores.data();
  for (std::size_t e = 0; e < m; ++e) {
    if (segment[e] >= num_segments) throw IndexError("segment_softmax: segment id out of range");
    mx[segment[e]] = std::max(mx[segment[e]], s[e]);
  }
  Value out = Value::zeros({m, 1});
  auto o = out.data();
  std::vector<double> z(num_segments, 0.0);
  for (std::size_t e = 0; e < m; ++e) z[segment[e]] += (o[e] = std::exp(s[e] - mx[segment[e]]));
  for (std::size_t e = 0; e < m; ++e) o[e] /= z[segment[e]];
  return tape.record(out, {scores},
                     [scores = scores, out, segment = std::move(segment), num_segments]() mutable {
                       auto g = out.grad();
                       auto y = out.data();
                       auto gs = scores.grad();
                       std::vector<double> dot(num_segments, 0.0);
                       for (std::size_t e = 0; e < y.size(); ++e) dot[segment[e]] += g[e] * y[e];
                       for (std::size_t e = 0; e < y.size(); ++e)
                         gs[e] += y[e] * (g[e] - dot[segment[e]]);
                     });
}

// Sparse message passing: out[dst[e]] += coeff[e]·scale[e]·messages[src[e]].
// `coeff` may be undefined, in which case only the constant scale applies.
inline Value edge_aggregate(Tape& tape, const Value& messages, const Value& coeff,
                            std::vector<double> scale_factors, std::vector<std::size_t> src,
                            std::vector<std::size_t> dst, std::size_t num_out) {
  detail::require_matrix(messages, "edge_aggregate");
  const std::size_t edges = src.size();
  if (dst.size() != edges || scale_factors.size() != edges ||
      (coeff.defined() && coeff.size() != edges)) {
    throw DimensionError("edge_aggregate: edge arrays have inconsistent lengths");
  }
  const std::size_t n = messages.cols();
  Value out = Value::zeros({num_out, n});
  auto o = out.data();
  auto msg = messages.data();
  for (std::size_t e = 0; e < edges; ++e) {
    if (src[e] >= messages.rows() || dst[e] >= num_out) {
      throw IndexError("edge_aggregate: edge " + std::to_string(e) + " endpoint out of range");
    }
    const double c = scale_factors[e] * (coeff.defined() ? coeff.data()[e] : 1.0);
    const double* from = msg.data() + src[e] * n;
    double* to = o.data() + dst[e] * n;
    for (std::size_t j = 0; j < n; ++j) to[j] += c * from[j];
  }
  const Value& weight_input = coeff.defined() ? coeff : messages;
  return tape.record(out, {messages, weight_input},
                     [messages = messages, coeff = coeff, out, scale_factors = std::move(scale_factors),
                      src = std::move(src), dst = std::move(dst), n]() mutable {
                       auto g = out.grad();
                       auto msg = messages.data();
                       const bool has_coeff = coeff.defined();
                       for (std::size_t e = 0; e < src.size(); ++e) {
                         const double* go = g.data() + dst[e] * n;
                         if (messages.requires_grad()) {
                           const double c = scale_factors[e] * (has_coeff ? coeff.data()[e] : 1.0);
                           double* gm = messages.grad().data() + src[e] * n;
                           for (std::size_t j = 0; j < n; ++j) gm[j] += c * go[j];
                         }
                         if (has_coeff && coeff.requires_grad()) {
                           const double* from = msg.data() + src[e] * n;
                           double acc = 0.0;
                           for (std::size_t j = 0; j < n; ++j) acc += go[j] * from[j];
                           coeff.grad()[e] += scale_factors[e] * acc;
                         }
                       }
                     });
}

// Mean over consecutive blocks of `group` rows: (group·k)×n -> k×n.
inline Value group_mean_rows(Tape& tape, const Value& x, std::size_t group) {
  detail::require_matrix(x, "group_mean_rows");
  if (group == 0 || x.rows() % group != 0) {
    throw ContractError("group_mean_rows: " + std::to_string(x.rows()) +
                        " rows not divisible by " + std::to_string(group));
  }
  const std::size_t k = x.rows() / group, n = x.cols();
  Value out = Value::zeros({k, n});
  auto o = out.data();
  auto in = x.data();
  const double inv = 1.0 / static_cast<double>(group);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t r = 0; r < group; ++r)
      for (std::size_t j = 0; j < n; ++j) o[i * n + j] += inv * in[(i * group + r) * n + j];
  return tape.record(out, {x}, [x = x, out, group, k, n, inv]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t r = 0; r < group; ++r)
        for (std::size_t j = 0; j < n; ++j) gx[(i * group + r) * n + j] += inv * g[i * n + j];
  });
}

// ---------------------------------------------------------------------------
// Regularization and loss

// Inverted dropout. Evaluation mode (or rate 0) returns x itself.
inline Value dropout(Tape& tape, const Value& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ParameterError("dropout: rate must lie in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  const double inv = 1.0 / (1.0 - rate);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = keep(rng) ? inv : 0.0;
  Value out = Value::zeros(x.shape());
  auto o = out.data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] * mask[i];
  return tape.record(out, {x}, [x = x, out, mask = std::move(mask)]() mutable {
    auto g = out.grad();
    auto gx = x.grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

// Mean negative log-softmax of the labelled class over the m rows.
inline Value cross_entropy(Tape& tape, const Value& logits, std::vector<std::size_t> labels) {
  detail::require_matrix(logits, "cross_entropy");
  const std::size_t m = logits.rows(), c = logits.cols();
  if (labels.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(m) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  if (m == 0) throw DimensionError("cross_entropy: empty batch");
  auto in = logits.data();
  std::vector<double> probs(m * c);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] >= c) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0," +
                       std::to_string(c) + ")");
    }
    const double* row = in.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (probs[i * c + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total += (mx + std::log(z)) - row[labels[i]];
  }
  Value out = Value::scalar(total / static_cast<double>(m));
  return tape.record(out, {logits},
                     [logits = logits, out, probs = std::move(probs), labels = std::move(labels), m,
                      c]() mutable {
                       const double g = out.grad()[0] / static_cast<double>(m);
                       auto gl = logits.grad();
                       for (std::size_t i = 0; i < m; ++i) {
                         for (std::size_t j = 0; j < c; ++j) gl[i * c + j] += g * probs[i * c + j];
                         gl[i * c + labels[i]] -= g;
                       }
                     });
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamOptions {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(std::span<const Value> params, AdamOptions options) : options_(options) {
    for (const auto& p : params) {
      first_.emplace_back(p.size(), 0.0);
      second_.emplace_back(p.size(), 0.0);
    }
  }

  const AdamOptions& options() const noexcept { return options_; }
  std::size_t step() const noexcept { return step_; }

  // One bias-corrected Adam update using the gradients held by `params`.
  void update(std::span<Value> params) {
    if (params.size() != first_.size()) {
      throw DimensionError("adam_step: state tracks " + std::to_string(first_.size()) +
                           " parameters, got " + std::to_string(params.size()));
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(options_.beta1, t);
    const double c2 = 1.0 - std::pow(options_.beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Value& p = params[k];
      if (p.size() != first_[k].size() || p.grad().size() != p.size()) {
        throw DimensionError("adam_step: parameter " + std::to_string(k) + " has shape " +
                             shape_str(p.shape()) + " inconsistent with optimizer state");
      }
      auto w = p.data();
      auto g = p.grad();
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
        v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        w[i] -= options_.learning_rate * mhat / (std::sqrt(vhat) + options_.epsilon);
      }
    }
  }

 private:
  AdamOptions options_;
  std::size_t step_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

inline void adam_step(std::span<Value> params, AdamState& state) { state.update(params); }

// ---------------------------------------------------------------------------
// Gradient verification

struct GradCheckOptions {
  double eps = 1e-6;
  // Coordinates checked per parameter; parameters at or below this size are
  // checked exhaustively.
  std::size_t coords_per_param = 64;
  std::uint64_t seed = 0;
  // Central differences cannot resolve a derivative smaller than their own
  // truncation/roundoff error. Coordinates with |analytic|+|numeric| below
  // this floor are scored by absolute error instead of relative error.
  // 0 scores every coordinate relatively.
  double magnitude_floor = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_param = 0;
  std::size_t worst_coord = 0;
  // Coordinates under GradCheckOptions::magnitude_floor.
  std::size_t coords_below_floor = 0;
  double max_abs_error_below_floor = 0.0;
  // Worst relative error over every coordinate, floor ignored.
  double max_rel_error_unfloored = 0.0;
};

// Compares the tape gradient of `loss_fn` against central differences on a
// sample of coordinates of every parameter. `loss_fn` must be deterministic.
inline GradCheckResult grad_check_detailed(const std::function<Value(Tape&)>& loss_fn,
                                           std::span<Value> params,
                                           const GradCheckOptions& options = {}) {
  for (auto& p : params) p.zero_grad();
  {
    Tape tape;
    tape.backward(loss_fn(tape));
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

  auto eval = [&]() {
    Tape tape;
    return loss_fn(tape).item();
  };

  GradCheckResult result;
  Rng rng(options.seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto w = params[k].data();
    std::vector<std::size_t> coords(w.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t idx : coords) {
      const double saved = w[idx];
      w[idx] = saved + options.eps;
      const double up = eval();
      w[idx] = saved - options.eps;
      const double down = eval();
      w[idx] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[k][idx];
      const double magnitude = std::abs(a) + std::abs(numeric);
      ++result.coords_checked;
      result.max_rel_error_unfloored = std::max(
          result.max_rel_error_unfloored, std::abs(a - numeric) / std::max(1e-8, magnitude));
      if (magnitude < options.magnitude_floor) {
        ++result.coords_below_floor;
        result.max_abs_error_below_floor =
            std::max(result.max_abs_error_below_floor, std::abs(a - numeric));
        continue;
      }
      const double rel = std::abs(a - numeric) / std::max(1e-8, magnitude);
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = k;
        result.worst_coord = idx;
      }
    }
  }
  return result;
}

inline double grad_check(const std::function<Value(Tape&)>& loss_fn, std::span<Value> params,
                         const GradCheckOptions& options = {}) {
  return grad_check_detailed(loss_fn, params, options).max_rel_error;
}

}  // namespace hfgcn
