#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass in insertion order
// (which is a topological order). backward() walks the tape once in reverse,
// accumulating gradients into the recorded nodes and finally into the
// Parameters that were read through Tape::parameter(). A tape constructed
// with record = false evaluates the same operations without storing any
// backward rules, which is how inference shares the training code path.

#include <bit>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "snerf/common.hpp"
#include "snerf/vector_math.hpp"

namespace snerf::ad {

using Tensor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

/// True when no entry is NaN or infinite. Works on the exponent bits with an
/// integer max-reduction, which vectorizes (Eigen's allFinite does not).
inline bool all_finite(const Tensor& t) {
  constexpr std::uint64_t exp_mask = 0x7ff0000000000000ULL;
  const double* d = t.data();
  const Index n = t.size();
  std::uint64_t worst = 0;
  for (Index i = 0; i < n; ++i) worst = std::max(worst, std::bit_cast<std::uint64_t>(d[i]) & exp_mask);
  return worst != exp_mask;
}

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

/// Named trainable tensors. Addresses stay stable as parameters are added.
class ParameterSet {
 public:
  Parameter& add(std::string name, Tensor value) {
    if (find(name)) throw Error(concat("duplicate parameter name: ", name));
    Tensor grad = Tensor::Zero(value.rows(), value.cols());
    params_.push_back(Parameter{std::move(name), std::move(value), std::move(grad)});
    return params_.back();
  }

  Parameter* find(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Parameter* find(std::string_view name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  Parameter& at(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw Error(concat("unknown parameter: ", name));
  }
  const Parameter& at(std::string_view name) const {
    if (const auto* p = find(name)) return *p;
    throw Error(concat("unknown parameter: ", name));
  }

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

 private:
  std::deque<Parameter> params_;
};

class Tape;

/// Handle to one node of a Tape. Cheap to copy; valid while the tape lives.
class Value {
 public:
  Value() = default;

  const Tensor& data() const;
  const Tensor& grad() const;
  Index rows() const { return data().rows(); }
  Index cols() const { return data().cols(); }
  double item() const;
  bool requires_grad() const;
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Value(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  Value constant(Tensor t) { return push(std::move(t), false, nullptr, "constant"); }
  Value constant(double v) {
    Tensor t(1, 1);
    t(0, 0) = v;
    return constant(std::move(t));
  }
  /// Leaf that receives a gradient but is not a registered parameter.
  Value variable(Tensor t) { return push(std::move(t), record_, nullptr, "variable"); }

  Value parameter(Parameter& p) {
    Value v = push(p.value, record_, nullptr, "parameter");
    nodes_[v.id_].param = &p;
    return v;
  }

  /// Records an operation whose inputs are `parents`. The backward rule is
  /// kept only when recording and at least one parent needs a gradient.
  Value record(Tensor data, std::initializer_list<Value> parents, BackwardFn fn, const char* op) {
    bool needs = false;
    if (record_)
      for (const Value& p : parents) {
        check_owner(p);
        needs = needs || nodes_[p.id_].requires_grad;
      }
    else
      for (const Value& p : parents) check_owner(p);
    return push(std::move(data), needs, needs ? std::move(fn) : nullptr, op);
  }

  Value record(Tensor data, const std::vector<Value>& parents, BackwardFn fn, const char* op) {
    bool needs = false;
    for (const Value& p : parents) {
      check_owner(p);
      needs = needs || (record_ && nodes_[p.id_].requires_grad);
    }
    return push(std::move(data), needs, needs ? std::move(fn) : nullptr, op);
  }

  const Tensor& data(std::size_t id) const { return nodes_[id].data; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Reverse sweep from a scalar loss. Gradients of parameter leaves are
  /// added to Parameter::grad. A tape supports exactly one sweep.
  void backward(const Value& loss) {
    check_owner(loss);
    if (!record_) throw Error("backward: tape was created without recording");
    if (backward_done_) throw Error("backward: tape already consumed; record a new forward pass");
    const Tensor& l = nodes_[loss.id_].data;
    if (l.rows() != 1 || l.cols() != 1)
      throw ShapeError(concat("backward: loss must be scalar, got ", l.rows(), "x", l.cols()));
    backward_done_ = true;
    if (!nodes_[loss.id_].requires_grad) return;
    nodes_[loss.id_].grad = Tensor::Ones(1, 1);
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
      if (n.param) {
        if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols())
          n.param->grad.setZero(n.grad.rows(), n.grad.cols());
        n.param->grad += n.grad;
      }
    }
  }

 private:
  friend class Value;

  struct Node {
    Tensor data;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  void check_owner(const Value& v) const {
    if (v.tape_ != this) throw Error("value belongs to a different tape");
  }

  Value push(Tensor data, bool requires_grad, BackwardFn fn, const char* op) {
    if (!all_finite(data)) throw NumericError(concat(op, ": non-finite value produced"));
    nodes_.push_back(Node{std::move(data), Tensor(), requires_grad, std::move(fn), nullptr});
    return Value(this, nodes_.size() - 1);
  }

  bool record_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;
};

inline const Tensor& Value::data() const { return tape_->nodes_[id_].data; }
inline const Tensor& Value::grad() const { return tape_->nodes_[id_].grad; }
inline bool Value::requires_grad() const { return tape_->nodes_[id_].requires_grad; }
inline double Value::item() const {
  const Tensor& d = data();
  if (d.size() != 1) throw ShapeError("item: value is not scalar");
  return d(0, 0);
}

namespace detail {

inline void require_same_shape(const Value& a, const Value& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(concat(op, ": shape mismatch ", a.rows(), "x", a.cols(), " vs ", b.rows(), "x",
                            b.cols()));
}

// out = x * W (+ b). Each output element accumulates over k in a fixed order
// and every row goes through the same 4-row kernel, so a row's result does
// not depend on how many other rows share the batch. Columns are processed in
// register-sized chunks of JC.
template <int JC>
void gemm_rows_blocked(const Tensor& x, const Tensor& w, const Tensor* b, Tensor& out) {
  constexpr int R = 4;
  const Index P = x.rows(), K = x.cols(), O = w.cols();
  out.resize(P, O);
  const Index OP = (O + JC - 1) / JC * JC;
  std::vector<double> wp(static_cast<std::size_t>(K * OP), 0.0);
  for (Index k = 0; k < K; ++k)
    for (Index j = 0; j < O; ++j) wp[static_cast<std::size_t>(k * OP + j)] = w(k, j);
  std::vector<double> bp(static_cast<std::size_t>(OP), 0.0);
  if (b)
    for (Index j = 0; j < O; ++j) bp[static_cast<std::size_t>(j)] = (*b)(0, j);
  std::vector<double> pad(static_cast<std::size_t>(R * K), 0.0);
  for (Index p = 0; p < P; p += R) {
    const Index rows = std::min<Index>(R, P - p);
    const double* xr[R];
    for (Index r = 0; r < R; ++r) xr[r] = r < rows ? x.data() + (p + r) * K : pad.data() + r * K;
    for (Index j0 = 0; j0 < OP; j0 += JC) {
      double acc[R][JC];
      for (int r = 0; r < R; ++r)
        for (int j = 0; j < JC; ++j) acc[r][j] = 0.0;
      for (Index k = 0; k < K; ++k) {
        const double* wk = wp.data() + k * OP + j0;
        for (int r = 0; r < R; ++r) {
          const double c = xr[r][k];
          for (int j = 0; j < JC; ++j) acc[r][j] += c * wk[j];
        }
      }
      for (Index r = 0; r < rows; ++r) {
        double* o = out.data() + (p + r) * O;
        for (Index j = 0; j < JC && j0 + j < O; ++j) o[j0 + j] = acc[r][j] + bp[static_cast<std::size_t>(j0 + j)];
      }
    }
  }
}

inline void gemm_rows(const Tensor& x, const Tensor& w, const Tensor* b, Tensor& out) {
  if (w.cols() <= 8)
    gemm_rows_blocked<8>(x, w, b, out);
  else if (w.cols() <= 16)
    gemm_rows_blocked<16>(x, w, b, out);
  else
    gemm_rows_blocked<32>(x, w, b, out);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

/// x[P x K] * W[K x O] + b[1 x O].
inline Value affine(const Value& x, const Value& w, const Value& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols())
    throw ShapeError(concat("affine: incompatible shapes x ", x.rows(), "x", x.cols(), ", W ", w.rows(),
                            "x", w.cols(), ", b ", b.rows(), "x", b.cols()));
  Tensor out;
  detail::gemm_rows(x.data(), w.data(), &b.data(), out);
  const std::size_t xi = x.id(), wi = w.id(), bi = b.id();
  return x.tape()->record(std::move(out), {x, w, b},
      [xi, wi, bi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(xi)) t.accumulate(xi, g * t.data(wi).transpose());
        if (t.needs_grad(wi)) t.accumulate(wi, t.data(xi).transpose() * g);
        if (t.needs_grad(bi)) t.accumulate(bi, g.colwise().sum());
      },
      "affine");
}

/// x[P x K] * W[K x O].
inline Value affine(const Value& x, const Value& w) {
  if (x.cols() != w.rows())
    throw ShapeError(concat("matmul: incompatible shapes ", x.rows(), "x", x.cols(), " * ", w.rows(),
                            "x", w.cols()));
  Tensor out;
  detail::gemm_rows(x.data(), w.data(), nullptr, out);
  const std::size_t xi = x.id(), wi = w.id();
  return x.tape()->record(std::move(out), {x, w},
      [xi, wi](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        if (t.needs_grad(xi)) t.accumulate(xi, g * t.data(wi).transpose());
        if (t.needs_grad(wi)) t.accumulate(wi, t.data(xi).transpose() * g);
      },
      "matmul");
}

/// sin(omega * x), elementwise.
inline Value sin(const Value& x, double omega = 1.0) {
  Tensor out(x.rows(), x.cols());
  vmath::sin_scaled(x.data().data(), out.data(), static_cast<std::size_t>(x.data().size()), omega);
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x},
      [xi, omega](Tape& t, std::size_t self) {
        const Tensor& in = t.data(xi);
        Tensor c(in.rows(), in.cols());
        vmath::cos_scaled(in.data(), c.data(), static_cast<std::size_t>(in.size()), omega);
        t.accumulate(xi, (omega * c.array() * t.grad(self).array()).matrix());
      },
      "sin");
}

inline Value relu(const Value& x) {
  Tensor out = x.data().cwiseMax(0.0);
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x},
      [xi](Tape& t, std::size_t self) {
        t.accumulate(xi, (t.data(xi).array() > 0.0).cast<double>().matrix().cwiseProduct(t.grad(self)));
      },
      "relu");
}

inline Value sigmoid(const Value& x) {
  // Scalar std::exp: Eigen's packet exp differs from its scalar tail in the
  // last bits, which would make results depend on batch size.
  Tensor out = x.data().unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x},
      [xi](Tape& t, std::size_t self) {
        const auto y = t.data(self).array();
        t.accumulate(xi, (y * (1.0 - y) * t.grad(self).array()).matrix());
      },
      "sigmoid");
}

inline Value exp(const Value& x) {
  Tensor out = x.data().unaryExpr([](double v) { return std::exp(v); });
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x},
      [xi](Tape& t, std::size_t self) {
        t.accumulate(xi, t.data(self).cwiseProduct(t.grad(self)));
      },
      "exp");
}

inline Value neg(const Value& x) {
  Tensor out = -x.data();
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x},
      [xi](Tape& t, std::size_t self) { t.accumulate(xi, -t.grad(self)); }, "neg");
}

inline Value add(const Value& a, const Value& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.data() + b.data();
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape()->record(std::move(out), {a, b},
      [ai, bi](Tape& t, std::size_t self) {
        t.accumulate(ai, t.grad(self));
        t.accumulate(bi, t.grad(self));
      },
      "add");
}

inline Value sub(const Value& a, const Value& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.data() - b.data();
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape()->record(std::move(out), {a, b},
      [ai, bi](Tape& t, std::size_t self) {
        t.accumulate(ai, t.grad(self));
        t.accumulate(bi, -t.grad(self));
      },
      "sub");
}

/// Elementwise product.
inline Value mul(const Value& a, const Value& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.data().cwiseProduct(b.data());
  const std::size_t ai = a.id(), bi = b.id();
  return a.tape()->record(std::move(out), {a, b},
      [ai, bi](Tape& t, std::size_t self) {
        if (t.needs_grad(ai)) t.accumulate(ai, t.grad(self).cwiseProduct(t.data(bi)));
        if (t.needs_grad(bi)) t.accumulate(bi, t.grad(self).cwiseProduct(t.data(ai)));
      },
      "mul");
}

inline Value scale(const Value& x, double c) {
  Tensor out = x.data() * c;
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x},
      [xi, c](Tape& t, std::size_t self) { t.accumulate(xi, t.grad(self) * c); }, "scale");
}

inline Value add_scalar(const Value& x, double c) {
  Tensor out = (x.data().array() + c).matrix();
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x},
      [xi](Tape& t, std::size_t self) { t.accumulate(xi, t.grad(self)); }, "add_scalar");
}

inline Value square(const Value& x) {
  Tensor out = x.data().cwiseAbs2();
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x},
      [xi](Tape& t, std::size_t self) {
        t.accumulate(xi, 2.0 * t.data(xi).cwiseProduct(t.grad(self)));
      },
      "square");
}

/// Sum of all elements, as a 1x1 value.
inline Value sum(const Value& x) {
  Tensor out(1, 1);
  out(0, 0) = x.data().sum();
  const std::size_t xi = x.id();
  const Index r = x.rows(), c = x.cols();
  return x.tape()->record(std::move(out), {x},
      [xi, r, c](Tape& t, std::size_t self) {
        t.accumulate(xi, Tensor::Constant(r, c, t.grad(self)(0, 0)));
      },
      "sum");
}

inline Value mean(const Value& x) {
  if (x.data().size() == 0) throw ShapeError("mean: empty value");
  Tensor out(1, 1);
  const double n = static_cast<double>(x.data().size());
  out(0, 0) = x.data().sum() / n;
  const std::size_t xi = x.id();
  const Index r = x.rows(), c = x.cols();
  return x.tape()->record(std::move(out), {x},
      [xi, r, c, n](Tape& t, std::size_t self) {
        t.accumulate(xi, Tensor::Constant(r, c, t.grad(self)(0, 0) / n));
      },
      "mean");
}

/// Per-row sum: [R x N] -> [R x 1].
inline Value sum_rows(const Value& x) {
  Tensor out = x.data().rowwise().sum();
  const std::size_t xi = x.id();
  const Index c = x.cols();
  return x.tape()->record(std::move(out), {x},
      [xi, c](Tape& t, std::size_t self) { t.accumulate(xi, t.grad(self).replicate(1, c)); },
      "sum_rows");
}

/// Horizontal concatenation of values with equal row counts.
inline Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row count mismatch");
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Index> offsets;
  Index off = 0;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.data();
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.cols();
  }
  return parts.front().tape()->record(std::move(out), parts,
      [ids, offsets](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        for (std::size_t k = 0; k < ids.size(); ++k)
          if (t.needs_grad(ids[k]))
            t.accumulate(ids[k], g.middleCols(offsets[k], t.data(ids[k]).cols()));
      },
      "concat_cols");
}

/// [R x 1] -> [R x n] by repeating the column.
inline Value broadcast_cols(const Value& x, Index n) {
  if (x.cols() != 1) throw ShapeError("broadcast_cols: input must have one column");
  Tensor out = x.data().replicate(1, n);
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x},
      [xi](Tape& t, std::size_t self) { t.accumulate(xi, t.grad(self).rowwise().sum()); },
      "broadcast_cols");
}

/// [1 x C] -> [n x C] by repeating the row.
inline Value broadcast_rows(const Value& x, Index n) {
  if (x.rows() != 1) throw ShapeError("broadcast_rows: input must have one row");
  Tensor out = x.data().replicate(n, 1);
  const std::size_t xi = x.id();
  return x.tape()->record(std::move(out), {x},
      [xi](Tape& t, std::size_t self) { t.accumulate(xi, t.grad(self).colwise().sum()); },
      "broadcast_rows");
}

/// Column j as [R x 1].
inline Value column(const Value& x, Index j) {
  if (j < 0 || j >= x.cols()) throw ShapeError("column: index out of range");
  Tensor out = x.data().col(j);
  const std::size_t xi = x.id();
  const Index r = x.rows(), c = x.cols();
  return x.tape()->record(std::move(out), {x},
      [xi, j, r, c](Tape& t, std::size_t self) {
        Tensor g = Tensor::Zero(r, c);
        g.col(j) = t.grad(self);
        t.accumulate(xi, g);
      },
      "column");
}

/// Row-major reinterpretation with the same element count.
inline Value reshape(const Value& x, Index rows, Index cols) {
  if (rows * cols != x.data().size()) throw ShapeError("reshape: element count mismatch");
  Tensor out = Eigen::Map<const Tensor>(x.data().data(), rows, cols);
  const std::size_t xi = x.id();
  const Index r = x.rows(), c = x.cols();
  return x.tape()->record(std::move(out), {x},
      [xi, r, c](Tape& t, std::size_t self) {
        t.accumulate(xi, Eigen::Map<const Tensor>(t.grad(self).data(), r, c));
      },
      "reshape");
}

/// Identity forward; blocks every gradient to the ancestors of x.
inline Value stop_gradient(const Value& x) {
  return x.tape()->constant(x.data());
}

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator-(const Value& a) { return neg(a); }

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update from the gradients stored in the parameters.
inline void adam_step(ParameterSet& params, AdamState& state, double lr, const AdamConfig& cfg = {}) {
  for (const auto& p : params)
    if (!all_finite(p.grad)) throw NumericError(concat("adam_step: non-finite gradient in ", p.name));
  if (state.m.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.m.push_back(Tensor::Zero(p.value.rows(), p.value.cols()));
      state.v.push_back(Tensor::Zero(p.value.rows(), p.value.cols()));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw ShapeError("adam_step: optimizer state does not match parameter count");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.m[i].rows() != params[i].value.rows() || state.m[i].cols() != params[i].value.cols() ||
        state.v[i].rows() != params[i].value.rows() || state.v[i].cols() != params[i].value.cols() ||
        params[i].grad.rows() != params[i].value.rows() || params[i].grad.cols() != params[i].value.cols())
      throw ShapeError(concat("adam_step: state shape mismatch for ", params[i].name));

  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * p.grad;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * p.grad.cwiseAbs2();
    p.value.array() -= lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + cfg.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint format (all integers and floats little-endian):
//   8 bytes  "SNERFCKP"
//   u32      version (1)
//   u64      entry count
//   per entry: u32 name length, name bytes, u32 rank, u64 dims[rank],
//              float64 data in row-major order

struct NamedTensor {
  std::string name;
  Tensor value;
};

inline constexpr char kCheckpointMagic[8] = {'S', 'N', 'E', 'R', 'F', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_le(std::ostream& os, T v) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U u = std::bit_cast<U>(v);
  char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  os.write(bytes, sizeof(U));
}

template <typename T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  unsigned char bytes[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw Error("checkpoint: truncated file");
  U u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(u);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, std::span<const NamedTensor> entries) {
  os.write(kCheckpointMagic, 8);
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_le<std::uint64_t>(os, entries.size());
  for (const auto& e : entries) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put_le<std::uint32_t>(os, 2);
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(e.value.rows()));
    detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(e.value.cols()));
    for (Index i = 0; i < e.value.size(); ++i) detail::put_le<double>(os, e.value.data()[i]);
  }
  if (!os) throw Error("checkpoint: write failed");
}

inline void write_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(concat("checkpoint: cannot open ", path.string(), " for writing"));
  write_checkpoint(os, entries);
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || !std::equal(magic, magic + 8, kCheckpointMagic))
    throw Error("checkpoint: bad magic");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) throw Error(concat("checkpoint: unsupported version ", version));
  const auto count = detail::get_le<std::uint64_t>(is);
  std::vector<NamedTensor> out;
  for (std::uint64_t k = 0; k < count; ++k) {
    NamedTensor e;
    const auto len = detail::get_le<std::uint32_t>(is);
    e.name.resize(len);
    if (!is.read(e.name.data(), len)) throw Error("checkpoint: truncated name");
    const auto rank = detail::get_le<std::uint32_t>(is);
    if (rank > 2) throw Error(concat("checkpoint: unsupported rank ", rank, " for ", e.name));
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t r = 0; r < rank; ++r) dims[2 - rank + r] = detail::get_le<std::uint64_t>(is);
    e.value.resize(static_cast<Index>(dims[0]), static_cast<Index>(dims[1]));
    for (Index i = 0; i < e.value.size(); ++i) e.value.data()[i] = detail::get_le<double>(is);
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(concat("checkpoint: cannot open ", path.string()));
  return read_checkpoint(is);
}

}  // namespace snerf::ad
