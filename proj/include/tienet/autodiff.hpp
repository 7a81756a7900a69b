#pragma once

// Define-by-run reverse-mode differentiation over tienet::Tensor.
//
// A Tape owns every value produced during one forward pass. Ops are free
// functions taking Var handles; each appends one node holding its output
// and a backward rule. Nodes are appended in execution order, so the tape
// is always topologically sorted and backward() is a single reverse sweep.
//
// Broadcasting is deliberately limited to scalar-with-tensor; anything else
// goes through expand() or reshape().

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "tienet/tensor.hpp"

namespace tienet::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  // Gradient after Tape::backward; zeros if nothing flowed here.
  Tensor grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class GradContext;
using BackwardFn = std::function<void(GradContext&)>;

class Tape {
 public:
  // grad_enabled=false records values only (inference).
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);

  // Seeds d(root)/d(root) = 1 and sweeps the tape once in reverse.
  void backward(Var root);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  const char* op_name(std::size_t id) const { return nodes_.at(id).op; }
  // Input ids of a node, for inspection.
  const std::vector<std::size_t>& inputs_of(std::size_t id) const { return nodes_.at(id).inputs; }

  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(const char* op, Tensor value, std::span<const Var> inputs, BackwardFn fn);

 private:
  friend class Var;
  friend class GradContext;

  struct Node {
    const char* op = "";
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  std::deque<Node> nodes_;
  bool grad_enabled_;
};

// Handed to a backward rule: output value/gradient and lazily zeroed
// gradient buffers for the inputs that require them.
class GradContext {
 public:
  GradContext(Tape& tape, std::size_t node, const Tensor& dout)
      : tape_(tape), node_(node), dout_(dout) {}
  const Tensor& out() const { return tape_.nodes_[node_].value; }
  const Tensor& dout() const { return dout_; }
  const Tensor& in(std::size_t k) const;
  bool needs(std::size_t k) const;
  Tensor& din(std::size_t k);

 private:
  Tape& tape_;
  std::size_t node_;
  const Tensor& dout_;
};

// --- linear algebra -------------------------------------------------------
Var matmul(Var a, Var b);         // [m,k] x [k,n] -> [m,n]
Var matvec(Var w, Var x);         // [m,n] x [n] -> [m]
Var linear(Var w, Var x, Var b);  // w x + b
Var transpose(Var a);             // 2-D only

// --- elementwise ------------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
Var shift(Var a, double k);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);
// Gradient passes only where lo < a < hi.
Var clamp(Var a, double lo, double hi);
// Multiplies by a constant mask (dropout, masking).
Var mask(Var a, const Tensor& m);

// --- reductions and normalisation -------------------------------------------
Var softmax(Var a, std::size_t axis);
Var log_softmax(Var a, std::size_t axis);
Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);
// Lowest index wins ties and receives the whole gradient.
Var max(Var a, std::size_t axis);
Var sum_all(Var a);

// --- shape -------------------------------------------------------------------
Var concat(std::span<const Var> parts, std::size_t axis);
Var concat(std::initializer_list<Var> parts, std::size_t axis);
Var reshape(Var a, Shape shape);
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
// Inserts a new axis of extent n at `axis`, copying a along it.
Var expand(Var a, std::size_t axis, std::size_t n);

// --- indexing ------------------------------------------------------------------
// Row `index` of a 2-D table.
Var row(Var table, std::size_t index);
// out[i] = a[i, index[i]] for 2-D a.
Var pick(Var a, std::span<const std::size_t> index);

// --- convolution ---------------------------------------------------------------
// x: [H,W,Cin], kernel: [Cout,K,K,Cin], bias: [Cout] -> [Ho,Wo,Cout], zero padding.
Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t pad);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// --- gradient checking ---------------------------------------------------------

using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

// Central differences with step h on every coordinate of every input.
// Returns max |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double gradcheck(const ScalarFn& f, const std::vector<Tensor>& inputs, double h = 1e-6);

// Per-input variant of gradcheck; entry k is the max error over inputs[k].
std::vector<double> gradcheck_each(const ScalarFn& f, const std::vector<Tensor>& inputs,
                                   double h = 1e-6);

double relative_error(double analytic, double numeric);

namespace testing {
// Negative-control hook: scales the incoming gradient of every node whose
// op name matches by 1.5 during backward. Empty string disables.
void corrupt_backward(const std::string& op);
}  // namespace testing

}  // namespace tienet::ad
