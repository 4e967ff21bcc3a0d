// Copyright 2026 The pathflow Authors.
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

#ifndef PATHFLOW_NUMERICS_TAPE_HPP
#define PATHFLOW_NUMERICS_TAPE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <pathflow/error.hpp>
#include <pathflow/numerics/dense.hpp>

/**
 * \file
 * \brief A minimal reverse-mode differentiation tape over vector-valued primitives.
 *
 * Every primitive reads one or two vector variables (and optionally a slice of the
 * parameter vector) and writes one new variable. Variables live in a single value
 * arena, so a contiguous range of nodes corresponds to a contiguous range of
 * adjoint slots; this is what allows layer-local vector-Jacobian products.
 *
 * A tape is single-owner. It does not copy the parameter vector; the span passed at
 * construction must outlive every forward and backward call.
 */

namespace pathflow {

/// Handle to a tape variable.
struct Var {
  static constexpr std::uint32_t kNone = 0xffffffffu;
  std::uint32_t id = kNone;
  [[nodiscard]] bool valid() const noexcept { return id != kNone; }
};

class Tape {
 public:
  enum class Op : std::uint8_t {
    kInput,
    kConstant,
    kParam,
    kLinear,
    kWnLinear,
    kTanh,
    kRelu,
    kExp,
    kLogAbs,
    kLogSigmoid,
    kNeg,
    kScale,
    kClamp,
    kAdd,
    kSub,
    kMul,
    kDiv,
    kGather,
    kScatter,
    kSum,
    kSegmentLogSumExp,
  };

  Tape() = default;
  explicit Tape(std::span<const double> params) : params_{params} {}

  /// Drops every node but keeps the allocated capacity.
  void reset(std::span<const double> params) {
    params_ = params;
    nodes_.clear();
    slots_.clear();
    values_.clear();
    indices_.clear();
  }

  [[nodiscard]] std::span<const double> params() const noexcept { return params_; }
  [[nodiscard]] bool empty() const noexcept { return nodes_.empty(); }
  [[nodiscard]] std::size_t node_count() const noexcept { return nodes_.size(); }
  [[nodiscard]] std::size_t value_count() const noexcept { return values_.size(); }
  [[nodiscard]] std::size_t var_count() const noexcept { return slots_.size(); }

  [[nodiscard]] std::span<const double> value(Var v) const {
    const auto& s = slots_[v.id];
    return {values_.data() + s.offset, s.length};
  }
  [[nodiscard]] std::size_t length(Var v) const { return slots_[v.id].length; }
  [[nodiscard]] std::size_t offset(Var v) const { return slots_[v.id].offset; }
  /// The most recently created variable.
  [[nodiscard]] Var last() const {
    if (slots_.empty()) throw UsageError("tape has no variables");
    return Var{static_cast<std::uint32_t>(slots_.size() - 1)};
  }

  // --- leaves ----------------------------------------------------------------

  Var input(std::span<const double> v) { return leaf(Op::kInput, v); }
  Var constant(std::span<const double> v) { return leaf(Op::kConstant, v); }

  /// Exposes `len` consecutive parameters starting at `offset` as a variable.
  Var param(std::size_t offset, std::size_t len) {
    check_params(offset, len);
    Node n{Op::kParam};
    n.param = offset;
    const Var out = alloc(len);
    std::copy_n(params_.data() + offset, len, ptr(out));
    return push(n, out);
  }

  // --- dense layers ----------------------------------------------------------

  /// y = W x + b, with W (out x in, row-major) followed by b (out) at `offset`.
  Var linear(Var x, std::size_t offset, std::size_t out_len) {
    const std::size_t in_len = length(x);
    check_params(offset, out_len * in_len + out_len);
    Node n{Op::kLinear};
    n.a = x.id;
    n.param = offset;
    n.rows = static_cast<std::uint32_t>(out_len);
    n.cols = static_cast<std::uint32_t>(in_len);
    const Var out = alloc(out_len);
    const double* w = params_.data() + offset;
    const double* b = w + out_len * in_len;
    const double* xv = ptr(x);
    double* y = ptr(out);
    for (std::size_t i = 0; i < out_len; ++i) {
      const double* wi = w + i * in_len;
      double s = b[i];
      for (std::size_t j = 0; j < in_len; ++j) s += wi[j] * xv[j];
      y[i] = s;
    }
    return push(n, out);
  }

  /// Weight-normalized linear layer: W_i = g_i v_i / |v_i|. Layout at `offset`: v (out x in), g (out), b (out).
  Var wn_linear(Var x, std::size_t offset, std::size_t out_len) {
    const std::size_t in_len = length(x);
    check_params(offset, out_len * in_len + 2 * out_len);
    Node n{Op::kWnLinear};
    n.a = x.id;
    n.param = offset;
    n.rows = static_cast<std::uint32_t>(out_len);
    n.cols = static_cast<std::uint32_t>(in_len);
    // Output followed by an auxiliary block holding row norms and raw projections.
    const Var out = alloc(out_len);
    n.aux = values_.size();
    values_.resize(values_.size() + 2 * out_len);
    const double* v = params_.data() + offset;
    const double* g = v + out_len * in_len;
    const double* b = g + out_len;
    const double* xv = ptr(x);
    double* y = ptr(out);
    double* norms = values_.data() + n.aux;
    double* proj = norms + out_len;
    for (std::size_t i = 0; i < out_len; ++i) {
      const double* vi = v + i * in_len;
      double nn = 0.0;
      double u = 0.0;
      for (std::size_t j = 0; j < in_len; ++j) {
        nn += vi[j] * vi[j];
        u += vi[j] * xv[j];
      }
      nn = std::sqrt(nn);
      if (nn == 0.0) throw NumericError(-1, "weight-normalized row with zero norm");
      norms[i] = nn;
      proj[i] = u;
      y[i] = g[i] * u / nn + b[i];
    }
    return push(n, out);
  }

  // --- elementwise -----------------------------------------------------------

  Var tanh(Var x) {
    return unary(Op::kTanh, x, [](double v) { return std::tanh(v); });
  }
  Var relu(Var x) {
    return unary(Op::kRelu, x, [](double v) { return v > 0.0 ? v : 0.0; });
  }
  Var exp(Var x) {
    return unary(Op::kExp, x, [](double v) { return std::exp(v); });
  }
  /// log|x|; the derivative is 1/x.
  Var log_abs(Var x) {
    return unary(Op::kLogAbs, x, [](double v) { return std::log(std::abs(v)); });
  }
  Var log_sigmoid(Var x) {
    return unary(Op::kLogSigmoid, x, [](double v) { return pathflow::log_sigmoid(v); });
  }
  Var neg(Var x) {
    return unary(Op::kNeg, x, [](double v) { return -v; });
  }
  Var scale(Var x, double c) {
    Node n{Op::kScale};
    n.c0 = c;
    return unary(n, x, [c](double v) { return c * v; });
  }
  /// Clamps to [lo, hi]; the derivative is zero outside the open interval.
  Var clamp(Var x, double lo, double hi) {
    Node n{Op::kClamp};
    n.c0 = lo;
    n.c1 = hi;
    return unary(n, x, [lo, hi](double v) { return std::clamp(v, lo, hi); });
  }

  Var add(Var a, Var b) {
    return binary(Op::kAdd, a, b, [](double u, double v) { return u + v; });
  }
  Var sub(Var a, Var b) {
    return binary(Op::kSub, a, b, [](double u, double v) { return u - v; });
  }
  Var mul(Var a, Var b) {
    return binary(Op::kMul, a, b, [](double u, double v) { return u * v; });
  }
  Var div(Var a, Var b) {
    return binary(Op::kDiv, a, b, [](double u, double v) { return u / v; });
  }

  // --- structural ------------------------------------------------------------

  /// y[i] = x[idx[i]]. Indices may repeat.
  Var gather(Var x, std::span<const std::uint32_t> idx) {
    const std::size_t in_len = length(x);
    Node n{Op::kGather};
    n.a = x.id;
    n.index_a = store_indices(idx, in_len);
    n.rows = static_cast<std::uint32_t>(idx.size());
    const Var out = alloc(idx.size());
    const double* xv = ptr(x);
    double* y = ptr(out);
    for (std::size_t i = 0; i < idx.size(); ++i) y[i] = xv[idx[i]];
    return push(n, out);
  }

  /// Assembles a length-n vector with y[idx_a[i]] = a[i] and y[idx_b[j]] = b[j].
  /// The two index sets must partition {0, ..., n-1}.
  Var scatter(Var a, std::span<const std::uint32_t> idx_a, Var b, std::span<const std::uint32_t> idx_b,
              std::size_t n_out) {
    if (idx_a.size() != length(a) || idx_b.size() != length(b) || idx_a.size() + idx_b.size() != n_out) {
      throw ConfigError("scatter: index sets do not match operand lengths");
    }
    Node n{Op::kScatter};
    n.a = a.id;
    n.b = b.id;
    n.index_a = store_indices(idx_a, n_out);
    n.index_b = store_indices(idx_b, n_out);
    const Var out = alloc(n_out);
    const double* av = ptr(a);
    const double* bv = ptr(b);
    double* y = ptr(out);
    for (std::size_t i = 0; i < idx_a.size(); ++i) y[idx_a[i]] = av[i];
    for (std::size_t j = 0; j < idx_b.size(); ++j) y[idx_b[j]] = bv[j];
    return push(n, out);
  }

  /// Length-1 variable holding the sum of x.
  Var sum(Var x) {
    Node n{Op::kSum};
    n.a = x.id;
    const Var out = alloc(1);
    double s = 0.0;
    for (double v : value(x)) s += v;
    *ptr(out) = s;
    return push(n, out);
  }

  /// log-sum-exp over consecutive groups of `segment` entries.
  Var segment_log_sum_exp(Var x, std::size_t segment) {
    const std::size_t len = length(x);
    if (segment == 0 || len % segment != 0) throw ConfigError("segment_log_sum_exp: bad segment size");
    Node n{Op::kSegmentLogSumExp};
    n.a = x.id;
    n.cols = static_cast<std::uint32_t>(segment);
    const Var out = alloc(len / segment);
    const double* xv = ptr(x);
    double* y = ptr(out);
    for (std::size_t s = 0; s < len / segment; ++s) {
      y[s] = log_sum_exp(std::span<const double>(xv + s * segment, segment));
    }
    return push(n, out);
  }

  // --- reverse pass ----------------------------------------------------------

  /// Propagates adjoints backwards over nodes [node_begin, node_end).
  ///
  /// `adjoint` is indexed like the value arena (size value_count()); callers seed it
  /// and read it back through adjoint_of(). Parameter adjoints are accumulated into
  /// `param_grad` unless it is empty, in which case only input adjoints are formed.
  void backward(std::span<double> adjoint, std::span<double> param_grad, std::size_t node_begin,
                std::size_t node_end) const {
    if (adjoint.size() < values_.size()) throw UsageError("adjoint buffer shorter than tape");
    if (!param_grad.empty() && param_grad.size() != params_.size()) {
      throw UsageError("parameter gradient buffer does not match parameter count");
    }
    const bool want_params = !param_grad.empty();
    for (std::size_t k = node_end; k-- > node_begin;) {
      const Node& n = nodes_[k];
      const Slot& os = slots_[n.out];
      const double* g = adjoint.data() + os.offset;
      const std::size_t len = os.length;
      switch (n.op) {
        case Op::kInput:
        case Op::kConstant:
          break;
        case Op::kParam:
          if (want_params) {
            for (std::size_t i = 0; i < len; ++i) param_grad[n.param + i] += g[i];
          }
          break;
        case Op::kLinear: {
          const std::size_t in_len = n.cols;
          const double* w = params_.data() + n.param;
          const double* xv = values_.data() + slots_[n.a].offset;
          double* gx = adjoint.data() + slots_[n.a].offset;
          double* gw = want_params ? param_grad.data() + n.param : nullptr;
          double* gb = want_params ? gw + len * in_len : nullptr;
          for (std::size_t i = 0; i < len; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            const double* wi = w + i * in_len;
            for (std::size_t j = 0; j < in_len; ++j) gx[j] += gi * wi[j];
            if (want_params) {
              double* gwi = gw + i * in_len;
              for (std::size_t j = 0; j < in_len; ++j) gwi[j] += gi * xv[j];
              gb[i] += gi;
            }
          }
          break;
        }
        case Op::kWnLinear: {
          const std::size_t in_len = n.cols;
          const double* v = params_.data() + n.param;
          const double* gain = v + len * in_len;
          const double* norms = values_.data() + n.aux;
          const double* proj = norms + len;
          const double* xv = values_.data() + slots_[n.a].offset;
          double* gx = adjoint.data() + slots_[n.a].offset;
          double* gv = want_params ? param_grad.data() + n.param : nullptr;
          double* gg = want_params ? gv + len * in_len : nullptr;
          double* gb = want_params ? gg + len : nullptr;
          for (std::size_t i = 0; i < len; ++i) {
            const double gi = g[i];
            if (gi == 0.0) continue;
            const double* vi = v + i * in_len;
            const double coef = gain[i] / norms[i];
            for (std::size_t j = 0; j < in_len; ++j) gx[j] += gi * coef * vi[j];
            if (want_params) {
              const double ratio = proj[i] / (norms[i] * norms[i]);
              double* gvi = gv + i * in_len;
              for (std::size_t j = 0; j < in_len; ++j) gvi[j] += gi * coef * (xv[j] - ratio * vi[j]);
              gg[i] += gi * proj[i] / norms[i];
              gb[i] += gi;
            }
          }
          break;
        }
        case Op::kTanh: {
          const double* y = values_.data() + os.offset;
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < len; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
          break;
        }
        case Op::kRelu: {
          const double* y = values_.data() + os.offset;
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < len; ++i) ga[i] += y[i] > 0.0 ? g[i] : 0.0;
          break;
        }
        case Op::kExp: {
          const double* y = values_.data() + os.offset;
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < len; ++i) ga[i] += g[i] * y[i];
          break;
        }
        case Op::kLogAbs: {
          const double* xv = values_.data() + slots_[n.a].offset;
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < len; ++i) ga[i] += g[i] / xv[i];
          break;
        }
        case Op::kLogSigmoid: {
          // d/dx log(sigmoid(x)) = sigmoid(-x) = -expm1(log(sigmoid(x)))
          const double* y = values_.data() + os.offset;
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < len; ++i) ga[i] += -g[i] * std::expm1(y[i]);
          break;
        }
        case Op::kNeg: {
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < len; ++i) ga[i] -= g[i];
          break;
        }
        case Op::kScale: {
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < len; ++i) ga[i] += n.c0 * g[i];
          break;
        }
        case Op::kClamp: {
          const double* xv = values_.data() + slots_[n.a].offset;
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < len; ++i) {
            if (xv[i] > n.c0 && xv[i] < n.c1) ga[i] += g[i];
          }
          break;
        }
        case Op::kAdd: {
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < len; ++i) ga[i] += g[i];
          double* gb = adjoint.data() + slots_[n.b].offset;
          for (std::size_t i = 0; i < len; ++i) gb[i] += g[i];
          break;
        }
        case Op::kSub: {
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < len; ++i) ga[i] += g[i];
          double* gb = adjoint.data() + slots_[n.b].offset;
          for (std::size_t i = 0; i < len; ++i) gb[i] -= g[i];
          break;
        }
        case Op::kMul: {
          const double* av = values_.data() + slots_[n.a].offset;
          const double* bv = values_.data() + slots_[n.b].offset;
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < len; ++i) ga[i] += g[i] * bv[i];
          double* gb = adjoint.data() + slots_[n.b].offset;
          for (std::size_t i = 0; i < len; ++i) gb[i] += g[i] * av[i];
          break;
        }
        case Op::kDiv: {
          const double* bv = values_.data() + slots_[n.b].offset;
          const double* y = values_.data() + os.offset;
          double* ga = adjoint.data() + slots_[n.a].offset;
          double* gb = adjoint.data() + slots_[n.b].offset;
          for (std::size_t i = 0; i < len; ++i) {
            ga[i] += g[i] / bv[i];
            gb[i] -= g[i] * y[i] / bv[i];
          }
          break;
        }
        case Op::kGather: {
          const std::uint32_t* idx = indices_.data() + n.index_a;
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < len; ++i) ga[idx[i]] += g[i];
          break;
        }
        case Op::kScatter: {
          const std::size_t la = slots_[n.a].length;
          const std::size_t lb = slots_[n.b].length;
          const std::uint32_t* ia = indices_.data() + n.index_a;
          const std::uint32_t* ib = indices_.data() + n.index_b;
          double* ga = adjoint.data() + slots_[n.a].offset;
          double* gb = adjoint.data() + slots_[n.b].offset;
          for (std::size_t i = 0; i < la; ++i) ga[i] += g[ia[i]];
          for (std::size_t j = 0; j < lb; ++j) gb[j] += g[ib[j]];
          break;
        }
        case Op::kSum: {
          const std::size_t la = slots_[n.a].length;
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t i = 0; i < la; ++i) ga[i] += g[0];
          break;
        }
        case Op::kSegmentLogSumExp: {
          const std::size_t seg = n.cols;
          const double* xv = values_.data() + slots_[n.a].offset;
          const double* y = values_.data() + os.offset;
          double* ga = adjoint.data() + slots_[n.a].offset;
          for (std::size_t s = 0; s < len; ++s) {
            if (g[s] == 0.0) continue;
            for (std::size_t j = 0; j < seg; ++j) ga[s * seg + j] += g[s] * std::exp(xv[s * seg + j] - y[s]);
          }
          break;
        }
      }
    }
  }

  /// Full reverse pass over every node.
  void backward(std::span<double> adjoint, std::span<double> param_grad) const {
    backward(adjoint, param_grad, 0, nodes_.size());
  }

  [[nodiscard]] std::span<double> adjoint_of(std::span<double> adjoint, Var v) const {
    const auto& s = slots_[v.id];
    return adjoint.subspan(s.offset, s.length);
  }
  [[nodiscard]] std::span<const double> adjoint_of(std::span<const double> adjoint, Var v) const {
    const auto& s = slots_[v.id];
    return adjoint.subspan(s.offset, s.length);
  }

 private:
  struct Slot {
    std::size_t offset;
    std::size_t length;
  };

  struct Node {
    Op op;
    std::uint32_t out = Var::kNone;
    std::uint32_t a = Var::kNone;
    std::uint32_t b = Var::kNone;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::size_t param = 0;
    std::size_t aux = 0;
    std::size_t index_a = 0;
    std::size_t index_b = 0;
    double c0 = 0.0;
    double c1 = 0.0;
  };

  Var alloc(std::size_t len) {
    const Var v{static_cast<std::uint32_t>(slots_.size())};
    slots_.push_back(Slot{values_.size(), len});
    values_.resize(values_.size() + len);
    return v;
  }

  double* ptr(Var v) { return values_.data() + slots_[v.id].offset; }

  Var push(Node n, Var out) {
    n.out = out.id;
    nodes_.push_back(n);
    return out;
  }

  Var leaf(Op op, std::span<const double> v) {
    const Var out = alloc(v.size());
    std::copy(v.begin(), v.end(), ptr(out));
    return push(Node{op}, out);
  }

  template <class F>
  Var unary(Node n, Var x, F&& f) {
    n.a = x.id;
    const std::size_t len = length(x);
    const Var out = alloc(len);
    const double* xv = ptr(x);
    double* y = ptr(out);
    for (std::size_t i = 0; i < len; ++i) y[i] = f(xv[i]);
    return push(n, out);
  }
  template <class F>
  Var unary(Op op, Var x, F&& f) {
    return unary(Node{op}, x, std::forward<F>(f));
  }

  template <class F>
  Var binary(Op op, Var a, Var b, F&& f) {
    const std::size_t len = length(a);
    if (length(b) != len) throw ConfigError("elementwise operands differ in length");
    Node n{op};
    n.a = a.id;
    n.b = b.id;
    const Var out = alloc(len);
    const double* av = ptr(a);
    const double* bv = ptr(b);
    double* y = ptr(out);
    for (std::size_t i = 0; i < len; ++i) y[i] = f(av[i], bv[i]);
    return push(n, out);
  }

  std::size_t store_indices(std::span<const std::uint32_t> idx, std::size_t bound) {
    for (auto i : idx) {
      if (i >= bound) throw ConfigError("tape index out of range");
    }
    const std::size_t off = indices_.size();
    indices_.insert(indices_.end(), idx.begin(), idx.end());
    return off;
  }

  void check_params(std::size_t offset, std::size_t len) const {
    if (offset + len > params_.size()) throw ConfigError("parameter slice exceeds parameter vector");
  }

  std::span<const double> params_;
  std::vector<Node> nodes_;
  std::vector<Slot> slots_;
  RealVector values_;
  std::vector<std::uint32_t> indices_;
};

/// Result of a full vector-Jacobian product.
struct VjpResult {
  RealVector param_grad;
  RealVector input_grad;
};

/// seed^T times the Jacobian of the tape's final variable, with respect to the
/// parameters and to the first input leaf.
[[nodiscard]] inline VjpResult tape_vjp(const Tape& tape, std::span<const double> seed, Var input) {
  if (tape.empty()) throw UsageError("tape_vjp on an empty tape");
  const Var out = tape.last();
  if (seed.size() != tape.length(out)) throw ConfigError("seed length does not match tape output");
  RealVector adjoint(tape.value_count(), 0.0);
  auto seed_slot = tape.adjoint_of(std::span<double>(adjoint), out);
  std::copy(seed.begin(), seed.end(), seed_slot.begin());
  VjpResult r;
  r.param_grad.assign(tape.params().size(), 0.0);
  tape.backward(adjoint, r.param_grad);
  if (input.valid()) {
    auto g = tape.adjoint_of(std::span<const double>(adjoint), input);
    r.input_grad.assign(g.begin(), g.end());
  }
  return r;
}

[[nodiscard]] inline VjpResult tape_vjp(const Tape& tape, std::span<const double> seed) {
  if (tape.empty()) throw UsageError("tape_vjp on an empty tape");
  return tape_vjp(tape, seed, Var{0});
}

}  // namespace pathflow

#endif
