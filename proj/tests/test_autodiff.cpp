#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include "tienet/autodiff.hpp"
#include "tienet/checkpoint.hpp"
#include "tienet/random.hpp"

using namespace tienet;
using ad::Tape;
using ad::Var;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * normal(rng);
  return t;
}

// Contracts an op's output with fixed random weights so every output
// coordinate carries an O(1) gradient.
Var contract(Var out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum_all(ad::mul(out, out.tape().constant(random_tensor(out.shape(), rng))));
}

std::size_t dim_in(std::mt19937_64& rng, std::size_t lo, std::size_t hi) { return lo + uniform_index(rng, hi - lo + 1); }

}  // namespace

TEST(Tensor, ShapeAndAccess) {
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  t.at(1, 2) = 5.0;
  EXPECT_EQ(t[5], 5.0);
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0}), std::invalid_argument);
}

TEST(Matmul, IdentityAndZero) {
  Tape tape;
  Var eye = tape.constant(Tensor({2, 2}, {1, 0, 0, 1}));
  Var a = tape.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(ad::matmul(eye, a).value(), a.value());
  Var z = tape.constant(Tensor::zeros({3, 2}));
  EXPECT_EQ(ad::matmul(z, a).value(), Tensor::zeros({3, 2}));
}

TEST(Matmul, GradientOfSumIsRowSumsOfB) {
  Tape tape;
  Var a = tape.leaf(Tensor({2, 2}, {1, 0, 0, 1}));
  Var b = tape.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  tape.backward(ad::sum_all(ad::matmul(a, b)));
  // d/dA_ik sum_ij (AB)_ij = sum_j B_kj
  EXPECT_EQ(a.grad(), Tensor({2, 2}, {6, 15, 6, 15}));
}

TEST(Softmax, FixedValues) {
  Tape tape;
  auto s = ad::softmax(tape.constant(Tensor::vector({1, 1, 1})), 0).value();
  for (double v : s.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  auto p = ad::softmax(tape.constant(Tensor::vector({0.0, std::log(2.0)})), 0).value();
  EXPECT_NEAR(p[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, GradientOnRandomVector) {
  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({5}, rng);
  const double err = ad::gradcheck([](Tape&, std::span<const Var> in) { return contract(ad::softmax(in[0], 0), 3); }, {x});
  EXPECT_LE(err, 1e-6);
}

TEST(Softmax, SumsToOneAndShiftInvariant) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t rows = dim_in(rng, 1, 5), cols = dim_in(rng, 1, 7);
    const Tensor x = random_tensor({rows, cols}, rng, 3.0);
    for (std::size_t axis : {0u, 1u}) {
      Tensor shifted = x;
      // One constant per slice along the softmax axis.
      std::vector<double> c(axis == 1 ? rows : cols);
      for (auto& v : c) v = 10.0 * normal(rng);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) shifted.at(i, j) += c[axis == 1 ? i : j];
      Tape tape(false);
      const Tensor p = ad::softmax(tape.constant(x), axis).value();
      const Tensor q = ad::softmax(tape.constant(shifted), axis).value();
      const Tensor total = ad::sum(tape.constant(p), axis).value();
      for (double v : total.data()) EXPECT_NEAR(v, 1.0, 1e-12);
      for (std::size_t k = 0; k < p.size(); ++k) EXPECT_NEAR(p[k], q[k], 1e-12);
    }
  }
}

namespace {

// Gradient of fn's scalar output with respect to a single leaf.
Tensor grad_of(const Tensor& x, const std::function<Var(Var)>& fn) {
  Tape tape;
  Var v = tape.leaf(x);
  tape.backward(fn(v));
  return v.grad();
}

void expect_close(const Tensor& a, const Tensor& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << i;
}

}  // namespace

TEST(Backward, ComposedMatchesFusedExpressions) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = dim_in(rng, 1, 5), n = dim_in(rng, 1, 6);
    const Tensor x = random_tensor({m, n}, rng);
    const Tensor w = random_tensor({m, n}, rng);
    const Tensor v = random_tensor({n}, rng);
    const Tensor b = random_tensor({m}, rng);
    const std::uint64_t seed = 100 + trial;

    // log(softmax(x)) against the fused log_softmax.
    expect_close(grad_of(x, [&](Var a) { return contract(ad::log(ad::softmax(a, 1)), seed); }),
                 grad_of(x, [&](Var a) { return contract(ad::log_softmax(a, 1), seed); }), 1e-10);
    // tanh(x) = 2 sigmoid(2x) - 1.
    expect_close(grad_of(x, [&](Var a) { return contract(ad::shift(ad::scale(ad::sigmoid(ad::scale(a, 2.0)), 2.0), -1.0), seed); }),
                 grad_of(x, [&](Var a) { return contract(ad::tanh(a), seed); }), 1e-10);
    // mean = sum / n.
    expect_close(grad_of(x, [&](Var a) { return contract(ad::scale(ad::sum(a, 1), 1.0 / static_cast<double>(n)), seed); }),
                 grad_of(x, [&](Var a) { return contract(ad::mean(a, 1), seed); }), 1e-10);
    // linear(w, x, b) = matvec(w, x) + b, differentiated with respect to w.
    expect_close(grad_of(w, [&](Var a) {
                   Tape& t = a.tape();
                   return contract(ad::add(ad::matvec(a, t.constant(v)), t.constant(b)), seed);
                 }),
                 grad_of(w, [&](Var a) {
                   Tape& t = a.tape();
                   return contract(ad::linear(a, t.constant(v), t.constant(b)), seed);
                 }),
                 1e-10);
  }
}

TEST(Backward, SameSequenceIsBitIdentical) {
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({4, 6}, rng);
  auto run = [&](Var a) {
    Var h = ad::tanh(ad::matmul(a, ad::transpose(a)));
    return contract(ad::log_softmax(ad::add(h, ad::relu(h)), 1), 77);
  };
  const Tensor g1 = grad_of(x, run), g2 = grad_of(x, run);
  EXPECT_EQ(g1, g2);
}

TEST(Elementwise, SymmetryPoints) {
  Tape tape;
  EXPECT_EQ(ad::tanh(tape.constant(Tensor::scalar(0))).value()[0], 0.0);
  EXPECT_EQ(ad::sigmoid(tape.constant(Tensor::scalar(0))).value()[0], 0.5);
}

TEST(Max, FirstIndexWinsTies) {
  Tape tape;
  Var x = tape.leaf(Tensor::vector({3, 1, 3}));
  Var m = ad::max(x, 0);
  EXPECT_EQ(m.value()[0], 3.0);
  tape.backward(ad::sum_all(m));
  EXPECT_EQ(x.grad(), Tensor::vector({1, 0, 0}));
}

TEST(Concat, ShapeArithmetic) {
  Tape tape;
  Var a = tape.constant(Tensor::zeros({2, 3}));
  Var b = tape.constant(Tensor::zeros({2, 5}));
  EXPECT_EQ(ad::concat({a, b}, 1).shape(), (Shape{2, 8}));
}

TEST(Gradcheck, SumAndConstant) {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({3, 4}, rng);
  EXPECT_LE(ad::gradcheck([](Tape&, std::span<const Var> in) { return ad::sum_all(in[0]); }, {x}), 1e-9);
  EXPECT_EQ(ad::gradcheck(
                [](Tape& t, std::span<const Var>) { return t.constant(Tensor::scalar(4.0)); }, {x}),
            0.0);
}

// Every op against central differences over 20 random shapes and seeds.
struct OpCase {
  const char* name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> inputs;
  std::function<Var(std::span<const Var>)> op;
};

class OpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradient, MatchesFiniteDifferences) {
  const OpCase& c = GetParam();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(derive_seed(seed, 0xab));
    const auto inputs = c.inputs(rng);
    const double err = ad::gradcheck(
        [&](Tape&, std::span<const Var> in) { return contract(c.op(in), seed + 100); }, inputs);
    EXPECT_LE(err, 1e-4) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllOps, OpGradient,
    ::testing::Values(
        OpCase{"matmul",
               [](auto& r) {
                 auto m = dim_in(r, 1, 4), k = dim_in(r, 1, 4), n = dim_in(r, 1, 4);
                 return std::vector{random_tensor({m, k}, r), random_tensor({k, n}, r)};
               },
               [](auto in) { return ad::matmul(in[0], in[1]); }},
        OpCase{"matvec",
               [](auto& r) {
                 auto m = dim_in(r, 1, 5), n = dim_in(r, 1, 9);
                 return std::vector{random_tensor({m, n}, r), random_tensor({n}, r)};
               },
               [](auto in) { return ad::matvec(in[0], in[1]); }},
        OpCase{"linear",
               [](auto& r) {
                 auto m = dim_in(r, 1, 5), n = dim_in(r, 1, 5);
                 return std::vector{random_tensor({m, n}, r), random_tensor({n}, r), random_tensor({m}, r)};
               },
               [](auto in) { return ad::linear(in[0], in[1], in[2]); }},
        OpCase{"transpose", [](auto& r) { return std::vector{random_tensor({dim_in(r, 1, 4), dim_in(r, 1, 4)}, r)}; },
               [](auto in) { return ad::transpose(in[0]); }},
        OpCase{"add_sub_mul",
               [](auto& r) {
                 Shape s{dim_in(r, 1, 3), dim_in(r, 1, 4)};
                 return std::vector{random_tensor(s, r), random_tensor(s, r)};
               },
               [](auto in) { return ad::mul(ad::sub(in[0], in[1]), ad::add(in[0], in[1])); }},
        OpCase{"scalar_broadcast",
               [](auto& r) { return std::vector{random_tensor({dim_in(r, 1, 5)}, r), random_tensor({1}, r)}; },
               [](auto in) { return ad::mul(in[0], in[1]); }},
        OpCase{"scale_shift", [](auto& r) { return std::vector{random_tensor({dim_in(r, 1, 6)}, r)}; },
               [](auto in) { return ad::shift(ad::scale(in[0], -1.7), 0.3); }},
        OpCase{"tanh", [](auto& r) { return std::vector{random_tensor({dim_in(r, 1, 6)}, r)}; },
               [](auto in) { return ad::tanh(in[0]); }},
        OpCase{"sigmoid", [](auto& r) { return std::vector{random_tensor({dim_in(r, 1, 6)}, r, 2.0)}; },
               [](auto in) { return ad::sigmoid(in[0]); }},
        OpCase{"relu", [](auto& r) { return std::vector{random_tensor({dim_in(r, 1, 8)}, r)}; },
               [](auto in) { return ad::relu(in[0]); }},
        OpCase{"exp_log", [](auto& r) { return std::vector{random_tensor({dim_in(r, 1, 6)}, r, 0.5)}; },
               [](auto in) { return ad::log(ad::shift(ad::exp(in[0]), 0.5)); }},
        OpCase{"clamp", [](auto& r) { return std::vector{random_tensor({dim_in(r, 1, 8)}, r)}; },
               [](auto in) { return ad::clamp(in[0], -0.5, 0.7); }},
        OpCase{"mask",
               [](auto& r) { return std::vector{random_tensor({dim_in(r, 2, 8)}, r)}; },
               [](auto in) {
                 Tensor m(in[0].shape());
                 for (std::size_t i = 0; i < m.size(); ++i) m[i] = i % 2 ? 2.0 : 0.0;
                 return ad::mask(in[0], m);
               }},
        OpCase{"softmax_axis1", [](auto& r) { return std::vector{random_tensor({dim_in(r, 1, 4), dim_in(r, 1, 5)}, r)}; },
               [](auto in) { return ad::softmax(in[0], 1); }},
        OpCase{"log_softmax", [](auto& r) { return std::vector{random_tensor({dim_in(r, 1, 4), dim_in(r, 1, 5)}, r)}; },
               [](auto in) { return ad::log_softmax(in[0], 1); }},
        OpCase{"sum_mean", [](auto& r) { return std::vector{random_tensor({dim_in(r, 1, 4), dim_in(r, 1, 5)}, r)}; },
               [](auto in) { return ad::concat({ad::sum(in[0], 0), ad::mean(in[0], 1)}, 0); }},
        OpCase{"max_axis0", [](auto& r) { return std::vector{random_tensor({dim_in(r, 1, 5), dim_in(r, 1, 4)}, r)}; },
               [](auto in) { return ad::max(in[0], 0); }},
        OpCase{"reshape_slice_expand",
               [](auto& r) { return std::vector{random_tensor({dim_in(r, 2, 4), 3}, r)}; },
               [](auto in) {
                 const std::size_t n = in[0].shape()[0];
                 Var flat = ad::reshape(in[0], {3 * n});
                 return ad::expand(ad::slice(flat, 0, 1, 3 * n - 1), 1, 2);
               }},
        OpCase{"row_pick",
               [](auto& r) { return std::vector{random_tensor({dim_in(r, 2, 5), dim_in(r, 2, 5)}, r)}; },
               [](auto in) {
                 const std::size_t rows = in[0].shape()[0], cols = in[0].shape()[1];
                 std::vector<std::size_t> idx(rows);
                 for (std::size_t i = 0; i < rows; ++i) idx[i] = (i * 7 + 1) % cols;
                 return ad::concat({ad::row(in[0], rows - 1), ad::pick(in[0], idx)}, 0);
               }},
        OpCase{"conv2d",
               [](auto& r) {
                 const std::size_t hw = dim_in(r, 3, 6), cin = dim_in(r, 1, 2), cout = dim_in(r, 1, 3);
                 return std::vector{random_tensor({hw, hw, cin}, r), random_tensor({cout, 3, 3, cin}, r),
                                    random_tensor({cout}, r)};
               },
               [](auto in) {
                 const std::size_t stride = 1 + in[0].shape()[0] % 2;
                 return ad::conv2d(in[0], in[1], in[2], stride, 1);
               }}),
    [](const ::testing::TestParamInfo<OpCase>& info) { return std::string(info.param.name); });

TEST(Gradcheck, CorruptedBackwardIsCaught) {
  std::mt19937_64 rng(5);
  const std::vector<Tensor> in{random_tensor({3, 4}, rng), random_tensor({4}, rng)};
  ad::testing::corrupt_backward("matvec");
  const double err = ad::gradcheck([](Tape&, std::span<const Var> v) { return contract(ad::matvec(v[0], v[1]), 1); }, in);
  ad::testing::corrupt_backward("");
  EXPECT_GT(err, 1e-2);
}

TEST(Tape, InferenceTapeRejectsBackward) {
  Tape tape(false);
  Var x = tape.leaf(Tensor::vector({1, 2}));
  EXPECT_THROW(tape.backward(ad::sum_all(x)), std::logic_error);
}

TEST(Checkpoint, RoundTripIsExact) {
  std::mt19937_64 rng(9);
  std::vector<NamedTensor> entries{{"a.weight", random_tensor({3, 2}, rng)}, {"b", random_tensor({5}, rng)}};
  std::stringstream buf;
  write_checkpoint(buf, entries);
  const auto back = read_checkpoint(buf);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "a.weight");
  EXPECT_EQ(back[0].value, entries[0].value);
  EXPECT_EQ(back[1].value, entries[1].value);
}

TEST(Checkpoint, RejectsBadMagic) {
  std::stringstream buf("NOTACKPT....");
  EXPECT_THROW(read_checkpoint(buf), std::runtime_error);
}
