#include "tienet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tienet::ad {

namespace {

std::string g_corrupted_op;

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  if (out.empty()) out.push_back(1);
  return out;
}

void same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

// Equal shapes, or one side is a single element.
enum class Bcast { kEqual, kScalarB, kScalarA };

Bcast broadcast_kind(const char* op, Var a, Var b) {
  same_tape(a, b);
  if (a.shape() == b.shape()) return Bcast::kEqual;
  if (b.size() == 1) return Bcast::kScalarB;
  if (a.size() == 1) return Bcast::kScalarA;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()));
}

template <typename Fwd, typename Deriv>
Var unary(const char* op, Var a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  return a.tape().record(op, std::move(y), {a}, [deriv](GradContext& g) {
    const Tensor& x = g.in(0);
    const Tensor& y = g.out();
    const Tensor& dy = g.dout();
    Tensor& dx = g.din(0);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

// --- Var / Tape -------------------------------------------------------------

const Tensor& Var::value() const { return tape_->nodes_.at(id_).value; }

bool Var::requires_grad() const { return tape_->nodes_.at(id_).requires_grad; }

Tensor Var::grad() const {
  const auto& node = tape_->nodes_.at(id_);
  if (node.grad.empty()) return Tensor::zeros(node.value.shape());
  return node.grad;
}

Var Tape::constant(Tensor value) {
  Node node;
  node.op = "constant";
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Tensor value) {
  Node node;
  node.op = "leaf";
  node.value = std::move(value);
  node.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(op, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(fn));
}

Var Tape::record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& v : inputs) {
      if (&v.tape() != this) throw std::invalid_argument(std::string(op) + ": input from another tape");
      node.requires_grad = node.requires_grad || v.requires_grad();
    }
    if (node.requires_grad) {
      node.inputs.reserve(inputs.size());
      for (const Var& v : inputs) node.inputs.push_back(v.id());
      node.backward = std::move(fn);
    }
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(Var root) {
  if (&root.tape() != this) throw std::invalid_argument("backward: root from another tape");
  if (!grad_enabled_) throw std::logic_error("backward on a tape recorded without gradients");
  Node& r = nodes_.at(root.id());
  if (r.value.size() != 1) {
    throw ShapeError("backward requires a scalar root, got " + shape_str(r.value.shape()));
  }
  if (!r.requires_grad) return;
  r.grad = Tensor::full(r.value.shape(), 1.0);
  for (std::size_t id = root.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.backward || node.grad.empty()) continue;
    if (!g_corrupted_op.empty() && g_corrupted_op == node.op) {
      Tensor scaled = node.grad;
      for (auto& v : scaled.data()) v *= 1.5;
      GradContext ctx(*this, id, scaled);
      node.backward(ctx);
    } else {
      GradContext ctx(*this, id, node.grad);
      node.backward(ctx);
    }
  }
}

const Tensor& GradContext::in(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].value;
}

bool GradContext::needs(std::size_t k) const {
  return tape_.nodes_[tape_.nodes_[node_].inputs[k]].requires_grad;
}

Tensor& GradContext::din(std::size_t k) {
  auto& input = tape_.nodes_[tape_.nodes_[node_].inputs[k]];
  if (input.grad.empty()) input.grad = Tensor::zeros(input.value.shape());
  return input.grad;
}

// --- linear algebra -----------------------------------------------------------

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw ShapeError("matmul: shape mismatch " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor C({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double* c = &C[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = &B[p * n];
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  return a.tape().record("matmul", std::move(C), {a, b}, [m, k, n](GradContext& g) {
    const Tensor& A = g.in(0);
    const Tensor& B = g.in(1);
    const Tensor& dC = g.dout();
    if (g.needs(0)) {
      Tensor& dA = g.din(0);  // dC B^T
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += dC[i * n + j] * B[p * n + j];
          dA[i * k + p] += acc;
        }
      }
    }
    if (g.needs(1)) {
      Tensor& dB = g.din(1);  // A^T dC
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          for (std::size_t j = 0; j < n; ++j) dB[p * n + j] += av * dC[i * n + j];
        }
      }
    }
  });
}

Var matvec(Var w, Var x) {
  same_tape(w, x);
  const Tensor& W = w.value();
  const Tensor& X = x.value();
  if (W.rank() != 2 || X.rank() != 1 || W.dim(1) != X.dim(0)) {
    throw ShapeError("matvec: shape mismatch " + shape_str(W.shape()) + " x " + shape_str(X.shape()));
  }
  const std::size_t m = W.dim(0), n = W.dim(1);
  Tensor y({m});
  const double* __restrict xp = X.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    // Four partial sums let the compiler pipeline the dot product.
    const double* __restrict wr = W.data().data() + i * n;
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      a0 += wr[j] * xp[j];
      a1 += wr[j + 1] * xp[j + 1];
      a2 += wr[j + 2] * xp[j + 2];
      a3 += wr[j + 3] * xp[j + 3];
    }
    for (; j < n; ++j) a0 += wr[j] * xp[j];
    y[i] = (a0 + a1) + (a2 + a3);
  }
  return w.tape().record("matvec", std::move(y), {w, x}, [m, n](GradContext& g) {
    const double* __restrict W = g.in(0).data().data();
    const double* __restrict X = g.in(1).data().data();
    const double* __restrict dy = g.dout().data().data();
    if (g.needs(0)) {
      double* __restrict dW = g.din(0).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double d = dy[i];
        if (d == 0.0) continue;
        double* __restrict dwr = dW + i * n;
        for (std::size_t j = 0; j < n; ++j) dwr[j] += d * X[j];
      }
    }
    if (g.needs(1)) {
      double* __restrict dX = g.din(1).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double d = dy[i];
        if (d == 0.0) continue;
        const double* __restrict wr = W + i * n;
        for (std::size_t j = 0; j < n; ++j) dX[j] += d * wr[j];
      }
    }
  });
}

Var linear(Var w, Var x, Var b) {
  same_tape(w, b);
  if (b.value().rank() != 1 || b.value().dim(0) != w.value().dim(0)) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  }
  return add(matvec(w, x), b);
}

Var transpose(Var a) {
  const Tensor& A = a.value();
  if (A.rank() != 2) throw ShapeError("transpose: expected 2-D, got " + shape_str(A.shape()));
  const std::size_t m = A.dim(0), n = A.dim(1);
  Tensor T({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) T[j * m + i] = A[i * n + j];
  return a.tape().record("transpose", std::move(T), {a}, [m, n](GradContext& g) {
    const Tensor& dT = g.dout();
    Tensor& dA = g.din(0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dA[i * n + j] += dT[j * m + i];
  });
}

// --- elementwise --------------------------------------------------------------

Var add(Var a, Var b) {
  const Bcast kind = broadcast_kind("add", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor C(kind == Bcast::kScalarA ? B.shape() : A.shape());
  for (std::size_t i = 0; i < C.size(); ++i) {
    C[i] = A[kind == Bcast::kScalarA ? 0 : i] + B[kind == Bcast::kScalarB ? 0 : i];
  }
  return a.tape().record("add", std::move(C), {a, b}, [kind](GradContext& g) {
    const Tensor& dC = g.dout();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!g.needs(k)) continue;
      Tensor& d = g.din(k);
      const bool reduce = (k == 0 && kind == Bcast::kScalarA) || (k == 1 && kind == Bcast::kScalarB);
      for (std::size_t i = 0; i < dC.size(); ++i) d[reduce ? 0 : i] += dC[i];
    }
  });
}

Var sub(Var a, Var b) {
  const Bcast kind = broadcast_kind("sub", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor C(kind == Bcast::kScalarA ? B.shape() : A.shape());
  for (std::size_t i = 0; i < C.size(); ++i) {
    C[i] = A[kind == Bcast::kScalarA ? 0 : i] - B[kind == Bcast::kScalarB ? 0 : i];
  }
  return a.tape().record("sub", std::move(C), {a, b}, [kind](GradContext& g) {
    const Tensor& dC = g.dout();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!g.needs(k)) continue;
      Tensor& d = g.din(k);
      const double sign = k == 0 ? 1.0 : -1.0;
      const bool reduce = (k == 0 && kind == Bcast::kScalarA) || (k == 1 && kind == Bcast::kScalarB);
      for (std::size_t i = 0; i < dC.size(); ++i) d[reduce ? 0 : i] += sign * dC[i];
    }
  });
}

Var mul(Var a, Var b) {
  const Bcast kind = broadcast_kind("mul", a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor C(kind == Bcast::kScalarA ? B.shape() : A.shape());
  for (std::size_t i = 0; i < C.size(); ++i) {
    C[i] = A[kind == Bcast::kScalarA ? 0 : i] * B[kind == Bcast::kScalarB ? 0 : i];
  }
  return a.tape().record("mul", std::move(C), {a, b}, [kind](GradContext& g) {
    const Tensor& A = g.in(0);
    const Tensor& B = g.in(1);
    const Tensor& dC = g.dout();
    const auto ia = [kind](std::size_t i) { return kind == Bcast::kScalarA ? 0 : i; };
    const auto ib = [kind](std::size_t i) { return kind == Bcast::kScalarB ? 0 : i; };
    if (g.needs(0)) {
      Tensor& dA = g.din(0);
      for (std::size_t i = 0; i < dC.size(); ++i) dA[ia(i)] += dC[i] * B[ib(i)];
    }
    if (g.needs(1)) {
      Tensor& dB = g.din(1);
      for (std::size_t i = 0; i < dC.size(); ++i) dB[ib(i)] += dC[i] * A[ia(i)];
    }
  });
}

Var scale(Var a, double k) {
  return unary(
      "scale", a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var shift(Var a, double k) {
  return unary(
      "shift", a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var mask(Var a, const Tensor& m) {
  if (m.shape() != a.shape()) {
    throw ShapeError("mask: shape " + shape_str(m.shape()) + " vs " + shape_str(a.shape()));
  }
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * m[i];
  return a.tape().record("mask", std::move(y), {a}, [m](GradContext& g) {
    const Tensor& dy = g.dout();
    Tensor& dx = g.din(0);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * m[i];
  });
}

// --- reductions ---------------------------------------------------------------

Var softmax(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const double e = std::exp(x[base + j * s.inner] - mx);
        y[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) y[base + j * s.inner] /= total;
    }
  }
  return a.tape().record("softmax", std::move(y), {a}, [s](GradContext& g) {
    const Tensor& y = g.out();
    const Tensor& dy = g.dout();
    Tensor& dx = g.din(0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) dot += dy[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          dx[idx] += y[idx] * (dy[idx] - dot);
        }
      }
    }
  });
}

Var log_softmax(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, x[base + j * s.inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < s.n; ++j) total += std::exp(x[base + j * s.inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t j = 0; j < s.n; ++j) y[base + j * s.inner] = x[base + j * s.inner] - lse;
    }
  }
  return a.tape().record("log_softmax", std::move(y), {a}, [s](GradContext& g) {
    const Tensor& y = g.out();
    const Tensor& dy = g.dout();
    Tensor& dx = g.din(0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double total = 0.0;
        for (std::size_t j = 0; j < s.n; ++j) total += dy[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          dx[idx] += dy[idx] - std::exp(y[idx]) * total;
        }
      }
    }
  });
}

Var sum(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor y(drop_axis(x.shape(), axis));
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      for (std::size_t in = 0; in < s.inner; ++in)
        y[o * s.inner + in] += x[(o * s.n + j) * s.inner + in];
  return a.tape().record("sum", std::move(y), {a}, [s](GradContext& g) {
    const Tensor& dy = g.dout();
    Tensor& dx = g.din(0);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.n; ++j)
        for (std::size_t in = 0; in < s.inner; ++in)
          dx[(o * s.n + j) * s.inner + in] += dy[o * s.inner + in];
  });
}

Var mean(Var a, std::size_t axis) {
  const std::size_t n = split_at(a.shape(), axis).n;
  return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

Var max(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_at(x.shape(), axis);
  Tensor y(drop_axis(x.shape(), axis));
  std::vector<std::size_t> arg(s.outer * s.inner, 0);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t best = 0;
      double bv = x[o * s.n * s.inner + in];
      for (std::size_t j = 1; j < s.n; ++j) {
        const double v = x[(o * s.n + j) * s.inner + in];
        if (v > bv) {
          bv = v;
          best = j;
        }
      }
      y[o * s.inner + in] = bv;
      arg[o * s.inner + in] = best;
    }
  }
  return a.tape().record("max", std::move(y), {a}, [s, arg = std::move(arg)](GradContext& g) {
    const Tensor& dy = g.dout();
    Tensor& dx = g.din(0);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in)
        dx[(o * s.n + arg[o * s.inner + in]) * s.inner + in] += dy[o * s.inner + in];
  });
}

Var sum_all(Var a) {
  const Tensor& x = a.value();
  double total = 0.0;
  for (double v : x.data()) total += v;
  return a.tape().record("sum_all", Tensor::scalar(total), {a}, [](GradContext& g) {
    const double d = g.dout()[0];
    for (auto& v : g.din(0).data()) v += d;
  });
}

// --- shape ----------------------------------------------------------------------

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Var& p : parts) {
    same_tape(parts[0], p);
    const Shape& sh = p.shape();
    bool ok = sh.size() == first.size();
    for (std::size_t i = 0; ok && i < sh.size(); ++i) ok = (i == axis) || sh[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(sh));
    }
    extents.push_back(sh[axis]);
    out_shape[axis] += sh[axis];
  }
  const AxisSplit s = split_at(out_shape, axis);
  Tensor y(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    const std::size_t n = extents[k];
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(&x[o * n * s.inner], n * s.inner, &y[(o * s.n + offset) * s.inner]);
    offset += n;
  }
  return parts[0].tape().record("concat", std::move(y), parts, [s, extents](GradContext& g) {
    const Tensor& dy = g.dout();
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      const std::size_t n = extents[k];
      if (g.needs(k)) {
        Tensor& dx = g.din(k);
        for (std::size_t o = 0; o < s.outer; ++o)
          for (std::size_t i = 0; i < n * s.inner; ++i)
            dx[o * n * s.inner + i] += dy[(o * s.n + offset) * s.inner + i];
      }
      offset += n;
    }
  });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return a.tape().record("reshape", std::move(y), {a}, [](GradContext& g) {
    const Tensor& dy = g.dout();
    Tensor& dx = g.din(0);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const AxisSplit s = split_at(x.shape(), axis);
  if (begin >= end || end > s.n) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  const std::size_t n = end - begin;
  out_shape[axis] = n;
  Tensor y(out_shape);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(&x[(o * s.n + begin) * s.inner], n * s.inner, &y[o * n * s.inner]);
  return a.tape().record("slice", std::move(y), {a}, [s, begin, n](GradContext& g) {
    const Tensor& dy = g.dout();
    Tensor& dx = g.din(0);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < n * s.inner; ++i)
        dx[(o * s.n + begin) * s.inner + i] += dy[o * n * s.inner + i];
  });
}

Var expand(Var a, std::size_t axis, std::size_t n) {
  const Tensor& x = a.value();
  if (axis > x.rank()) throw ShapeError("expand: axis out of range for " + shape_str(x.shape()));
  if (n == 0) throw ShapeError("expand: extent must be positive");
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis; i < x.rank(); ++i) inner *= x.dim(i);
  Shape out_shape = x.shape();
  out_shape.insert(out_shape.begin() + static_cast<std::ptrdiff_t>(axis), n);
  Tensor y(out_shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < n; ++j) std::copy_n(&x[o * inner], inner, &y[(o * n + j) * inner]);
  return a.tape().record("expand", std::move(y), {a}, [outer, inner, n](GradContext& g) {
    const Tensor& dy = g.dout();
    Tensor& dx = g.din(0);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < inner; ++i) dx[o * inner + i] += dy[(o * n + j) * inner + i];
  });
}

// --- indexing -------------------------------------------------------------------

Var row(Var table, std::size_t index) {
  const Tensor& t = table.value();
  if (t.rank() != 2) throw ShapeError("row: expected 2-D table, got " + shape_str(t.shape()));
  if (index >= t.dim(0)) {
    throw std::out_of_range("row: index " + std::to_string(index) + " >= " + std::to_string(t.dim(0)));
  }
  const std::size_t d = t.dim(1);
  Tensor y({d});
  std::copy_n(&t[index * d], d, &y[0]);
  return table.tape().record("row", std::move(y), {table}, [index, d](GradContext& g) {
    const Tensor& dy = g.dout();
    Tensor& dt = g.din(0);
    for (std::size_t j = 0; j < d; ++j) dt[index * d + j] += dy[j];
  });
}

Var pick(Var a, std::span<const std::size_t> index) {
  const Tensor& x = a.value();
  if (x.rank() != 2 || index.size() != x.dim(0)) {
    throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " + shape_str(x.shape()));
  }
  const std::size_t n = x.dim(1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor y({idx.size()});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= n) throw std::out_of_range("pick: index out of range");
    y[i] = x[i * n + idx[i]];
  }
  return a.tape().record("pick", std::move(y), {a}, [n, idx = std::move(idx)](GradContext& g) {
    const Tensor& dy = g.dout();
    Tensor& dx = g.din(0);
    for (std::size_t i = 0; i < idx.size(); ++i) dx[i * n + idx[i]] += dy[i];
  });
}

// --- convolution ----------------------------------------------------------------

Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t pad) {
  same_tape(x, kernel);
  same_tape(x, bias);
  const Tensor& X = x.value();
  const Tensor& K = kernel.value();
  const Tensor& B = bias.value();
  if (X.rank() != 3 || K.rank() != 4 || K.dim(3) != X.dim(2) || K.dim(1) != K.dim(2) ||
      B.rank() != 1 || B.dim(0) != K.dim(0) || stride == 0) {
    throw ShapeError("conv2d: incompatible input " + shape_str(X.shape()) + ", kernel " +
                     shape_str(K.shape()) + ", bias " + shape_str(B.shape()));
  }
  const std::size_t H = X.dim(0), W = X.dim(1), cin = X.dim(2);
  const std::size_t cout = K.dim(0), ks = K.dim(1);
  if (H + 2 * pad < ks || W + 2 * pad < ks) throw ShapeError("conv2d: kernel larger than input");
  const std::size_t ho = (H + 2 * pad - ks) / stride + 1;
  const std::size_t wo = (W + 2 * pad - ks) / stride + 1;
  Tensor Y({ho, wo, cout});

  // Visits every (output, kernel tap) pair whose input pixel is inside the image.
  auto for_taps = [=](auto&& fn) {
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ky = 0; ky < ks; ++ky) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t ox = 0; ox < wo; ++ox)
          for (std::size_t kx = 0; kx < ks; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
            fn((oy * wo + ox) * cout, (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * cin,
               (ky * ks + kx) * cin);
          }
      }
  };

  for (std::size_t p = 0; p < ho * wo; ++p)
    for (std::size_t co = 0; co < cout; ++co) Y[p * cout + co] = B[co];
  const std::size_t kstride = ks * ks * cin;
  for_taps([&](std::size_t yo, std::size_t xo, std::size_t ko) {
    const double* xp = &X[xo];
    for (std::size_t co = 0; co < cout; ++co) {
      const double* kp = &K[co * kstride + ko];
      double acc = 0.0;
      for (std::size_t ci = 0; ci < cin; ++ci) acc += xp[ci] * kp[ci];
      Y[yo + co] += acc;
    }
  });

  return x.tape().record(
      "conv2d", std::move(Y), {x, kernel, bias}, [for_taps, cout, cin, kstride, ho, wo](GradContext& g) {
        const Tensor& X = g.in(0);
        const Tensor& K = g.in(1);
        const Tensor& dY = g.dout();
        if (g.needs(2)) {
          Tensor& dB = g.din(2);
          for (std::size_t p = 0; p < ho * wo; ++p)
            for (std::size_t co = 0; co < cout; ++co) dB[co] += dY[p * cout + co];
        }
        Tensor* dX = g.needs(0) ? &g.din(0) : nullptr;
        Tensor* dK = g.needs(1) ? &g.din(1) : nullptr;
        if (!dX && !dK) return;
        for_taps([&](std::size_t yo, std::size_t xo, std::size_t ko) {
          for (std::size_t co = 0; co < cout; ++co) {
            const double d = dY[yo + co];
            if (d == 0.0) continue;
            if (dK) {
              double* dkp = &(*dK)[co * kstride + ko];
              const double* xp = &X[xo];
              for (std::size_t ci = 0; ci < cin; ++ci) dkp[ci] += d * xp[ci];
            }
            if (dX) {
              double* dxp = &(*dX)[xo];
              const double* kp = &K[co * kstride + ko];
              for (std::size_t ci = 0; ci < cin; ++ci) dxp[ci] += d * kp[ci];
            }
          }
        });
      });
}

// --- gradient checking ----------------------------------------------------------

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

std::vector<double> gradcheck_each(const ScalarFn& f, const std::vector<Tensor>& inputs, double h) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t));
    Var out = f(tape, vars);
    if (out.size() != 1) throw ShapeError("gradcheck: function output is not scalar: " + shape_str(out.shape()));
    tape.backward(out);
    for (const auto& v : vars) analytic.push_back(v.grad());
  }

  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape tape(false);
    std::vector<Var> vars;
    for (const auto& t : xs) vars.push_back(tape.constant(t));
    return f(tape, vars).value().item();
  };

  std::vector<double> errors(inputs.size(), 0.0);
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      probe[k][i] = orig + h;
      const double fp = evaluate(probe);
      probe[k][i] = orig - h;
      const double fm = evaluate(probe);
      probe[k][i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      errors[k] = std::max(errors[k], relative_error(analytic[k][i], numeric));
    }
  }
  return errors;
}

double gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs, double h) {
  double worst = 0.0;
  for (double e : gradcheck_each(f, inputs, h)) worst = std::max(worst, e);
  return worst;
}

namespace testing {
void corrupt_backward(const std::string& op) { g_corrupted_op = op; }
}  // namespace testing

}  // namespace tienet::ad
