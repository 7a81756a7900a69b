#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "tienet/gradcheck.hpp"
#include "tienet/model.hpp"
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

Tensor random_image(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor({c.image_size, c.image_size, c.image_channels}, rng);
}

text::TokenSequence tokens(std::vector<std::size_t> inner) {
  text::TokenSequence s;
  s.ids.push_back(text::kStart);
  for (auto i : inner) s.ids.push_back(i);
  s.ids.push_back(text::kEnd);
  return s;
}

void fill_param(TieNetModel& m, std::size_t slot, double v) { m.mutable_parameters()[slot].value.fill(v); }

void jitter(TieNetModel& m, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  for (auto& p : m.mutable_parameters())
    for (auto& v : p.value.data()) v += uniform(rng, -scale, scale);
}

ModelConfig random_small_config(std::mt19937_64& rng, Mode mode) {
  ModelConfig c = tiny_config(mode);
  c.channels = 1 + uniform_index(rng, 4);
  c.hidden = 1 + uniform_index(rng, 5);
  c.att_hidden = 1 + uniform_index(rng, 6);
  c.att_rows = 1 + uniform_index(rng, 4);
  c.spatial_hidden = 1 + uniform_index(rng, 4);
  return c;
}

// One entry per D x T x r combination, each repeated twice: 54 configurations.
struct PoolCase {
  std::size_t D, T, r;
};
std::vector<PoolCase> pooling_grid() {
  std::vector<PoolCase> out;
  for (int rep = 0; rep < 2; ++rep)
    for (std::size_t D : {1u, 2u, 4u})
      for (std::size_t T : {1u, 3u, 7u})
        for (std::size_t r : {1u, 2u, 5u}) out.push_back({D, T, r});
  return out;
}

ModelConfig pooling_config(std::mt19937_64& rng, const PoolCase& pc) {
  ModelConfig c = random_small_config(rng, Mode::kImageReport);
  c.image_size = pc.D * 8;  // three stride-2 layers
  c.att_rows = pc.r;
  return c;
}

}  // namespace

// --- pooling oracles --------------------------------------------------------------------------

TEST(Aete, MatchesNestedLoopsOverRandomConfigs) {
  std::mt19937_64 rng(31);
  const auto grid = pooling_grid();
  ASSERT_GE(grid.size(), 50u);
  for (std::size_t trial = 0; trial < grid.size(); ++trial) {
    const ModelConfig c = pooling_config(rng, grid[trial]);
    TieNetModel model(c, trial);
    jitter(model, trial + 1000);
    const std::size_t T = grid[trial].T, d = c.hidden;
    const Tensor Hrows = random_tensor({T, d}, rng);

    Tape tape(false);
    Session s(model, tape);
    Var hr = tape.constant(Hrows);
    const AeteResult got = s.aete(ad::transpose(hr), hr);

    const Tensor& W1 = model.parameters()[model.slots().aete_ws1].value;  // [s, d]
    const Tensor& W2 = model.parameters()[model.slots().aete_ws2].value;  // [r, s]
    const std::size_t r = c.att_rows, sa = c.att_hidden;
    std::vector<std::vector<double>> G(r, std::vector<double>(T));
    for (std::size_t i = 0; i < r; ++i) {
      std::vector<double> score(T);
      for (std::size_t t = 0; t < T; ++t) {
        double acc = 0.0;
        for (std::size_t k = 0; k < sa; ++k) {
          double inner = 0.0;
          for (std::size_t j = 0; j < d; ++j) inner += W1.at(k, j) * Hrows.at(t, j);
          acc += W2.at(i, k) * std::tanh(inner);
        }
        score[t] = acc;
      }
      double mx = score[0];
      for (double v : score) mx = std::max(mx, v);
      double z = 0.0;
      for (std::size_t t = 0; t < T; ++t) z += std::exp(score[t] - mx);
      for (std::size_t t = 0; t < T; ++t) G[i][t] = std::exp(score[t] - mx) / z;
    }
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t t = 0; t < T; ++t) EXPECT_NEAR(got.G.value().at(i, t), G[i][t], 1e-10);
    for (std::size_t j = 0; j < d; ++j) {
      double best = -1e300;
      for (std::size_t i = 0; i < r; ++i) {
        double m = 0.0;
        for (std::size_t t = 0; t < T; ++t) m += G[i][t] * Hrows.at(t, j);
        EXPECT_NEAR(got.M.value().at(i, j), m, 1e-10);
        best = std::max(best, m);
      }
      EXPECT_NEAR(got.embedding.value()[j], best, 1e-10);
    }
  }
}

TEST(Aete, SingletonAndIdenticalStates) {
  ModelConfig c = tiny_config(Mode::kReport);
  TieNetModel model(c, 3);
  std::mt19937_64 rng(8);
  Tape tape(false);
  Session s(model, tape);
  const Tensor h = random_tensor({1, c.hidden}, rng);
  Var hv = tape.constant(h);
  const auto one = s.aete(ad::transpose(hv), hv);
  for (std::size_t i = 0; i < c.att_rows; ++i) {
    EXPECT_EQ(one.G.value().at(i, 0), 1.0);
    for (std::size_t j = 0; j < c.hidden; ++j) EXPECT_NEAR(one.M.value().at(i, j), h[j], 1e-15);
  }
  for (std::size_t j = 0; j < c.hidden; ++j) EXPECT_NEAR(one.embedding.value()[j], h[j], 1e-15);

  Tensor same({4, c.hidden});
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < c.hidden; ++j) same.at(t, j) = h[j];
  Var sv = tape.constant(same);
  const auto rep = s.aete(ad::transpose(sv), sv);
  for (std::size_t j = 0; j < c.hidden; ++j) EXPECT_NEAR(rep.embedding.value()[j], h[j], 1e-14);
}

TEST(Swgap, MatchesNestedLoopsOverRandomConfigs) {
  std::mt19937_64 rng(77);
  const auto grid = pooling_grid();
  for (std::size_t trial = 0; trial < grid.size(); ++trial) {
    const ModelConfig c = pooling_config(rng, grid[trial]);
    TieNetModel model(c, trial);
    const std::size_t D = c.grid(), cells = D * D, T = grid[trial].T, r = c.att_rows;
    ASSERT_EQ(D, grid[trial].D);
    const Tensor X = random_tensor({D, D, c.channels}, rng);
    Tensor G({r, T});
    for (std::size_t i = 0; i < r; ++i) {
      double z = 0.0;
      for (std::size_t t = 0; t < T; ++t) z += G.at(i, t) = std::exp(normal(rng));
      for (std::size_t t = 0; t < T; ++t) G.at(i, t) /= z;
    }
    std::vector<Tensor> maps;
    for (std::size_t t = 0; t < T; ++t) {
      Tensor m({cells});
      double z = 0.0;
      for (auto& v : m.data()) z += v = std::exp(normal(rng));
      for (auto& v : m.data()) v /= z;
      maps.push_back(m);
    }

    Tape tape(false);
    Session s(model, tape);
    const auto ctx = s.visual_context(tape.constant(X));
    std::vector<Var> mv;
    for (const auto& m : maps) mv.push_back(tape.constant(m));
    const SwgapResult got = s.swgap(tape.constant(G), mv, ctx);

    std::vector<double> sal(T);
    for (std::size_t t = 0; t < T; ++t) {
      sal[t] = G.at(0, t);
      for (std::size_t i = 1; i < r; ++i) sal[t] = std::max(sal[t], G.at(i, t));
      EXPECT_NEAR(got.saliency.value()[t], sal[t], 1e-12);
    }
    std::vector<double> aws(cells, 0.0);
    for (std::size_t k = 0; k < cells; ++k) {
      for (std::size_t t = 0; t < T; ++t) aws[k] += maps[t][k] * sal[t];
      EXPECT_NEAR(got.weighted.value()[k], aws[k], 1e-10);
    }
    for (std::size_t ch = 0; ch < c.channels; ++ch) {
      double pooled = 0.0;
      for (std::size_t y = 0; y < D; ++y)
        for (std::size_t x = 0; x < D; ++x) pooled += aws[y * D + x] * X.at(y, x, ch);
      EXPECT_NEAR(got.pooled.value()[ch], pooled, 1e-10);
    }
  }
}

TEST(Swgap, DeltaAndUniformPooling) {
  const ModelConfig c = tiny_config(Mode::kImageReport);
  TieNetModel model(c, 1);
  std::mt19937_64 rng(3);
  const std::size_t D = c.grid(), cells = D * D;
  const Tensor X = random_tensor({D, D, c.channels}, rng);
  Tape tape(false);
  Session s(model, tape);
  const auto ctx = s.visual_context(tape.constant(X));

  Tensor onehot({cells});
  onehot[D + 1] = 1.0;  // cell (1, 1)
  Tensor g1({1, 1}, {1.0});
  std::vector<Var> one{tape.constant(onehot)};
  const auto delta = s.swgap(tape.constant(g1), one, ctx);
  for (std::size_t ch = 0; ch < c.channels; ++ch) EXPECT_NEAR(delta.pooled.value()[ch], X.at(1, 1, ch), 1e-15);

  const std::size_t T = 3;
  Tensor G = Tensor::full({1, T}, 1.0);
  std::vector<Var> uni(T, tape.constant(Tensor::full({cells}, 1.0 / cells)));
  const auto u = s.swgap(tape.constant(G), uni, ctx);
  for (std::size_t ch = 0; ch < c.channels; ++ch) {
    double mean = 0.0;
    for (std::size_t k = 0; k < cells; ++k) mean += X[k * c.channels + ch];
    mean /= cells;
    EXPECT_NEAR(u.pooled.value()[ch], T * mean, 1e-14);
  }
}

TEST(Pooling, RowShiftedLogitsGiveIdenticalOutputs) {
  std::mt19937_64 rng(55);
  for (int trial = 0; trial < 20; ++trial) {
    ModelConfig c = random_small_config(rng, Mode::kImageReport);
    TieNetModel model(c, trial);
    const std::size_t D = c.grid(), T = 1 + uniform_index(rng, 7), r = c.att_rows, d = c.hidden;
    const Tensor logits = random_tensor({r, T}, rng, 2.0);
    Tensor shifted = logits;
    for (std::size_t i = 0; i < r; ++i) {
      const double k = 20.0 * normal(rng);
      for (std::size_t t = 0; t < T; ++t) shifted.at(i, t) += k;
    }
    const Tensor X = random_tensor({D, D, c.channels}, rng);
    const Tensor H = random_tensor({T, d}, rng);
    std::vector<Tensor> maps;
    for (std::size_t t = 0; t < T; ++t) maps.push_back(random_tensor({D * D}, rng));

    Tape tape(false);
    Session s(model, tape);
    const auto ctx = s.visual_context(tape.constant(X));
    std::vector<Var> mv;
    for (const auto& m : maps) mv.push_back(ad::softmax(tape.constant(m), 0));
    Var hv = tape.constant(H);
    auto pooled = [&](const Tensor& l) {
      Var G = ad::softmax(tape.constant(l), 1);
      return std::make_pair(ad::matmul(G, hv).value(), s.swgap(G, mv, ctx).pooled.value());
    };
    const auto a = pooled(logits), b = pooled(shifted);
    for (std::size_t k = 0; k < a.first.size(); ++k) EXPECT_NEAR(a.first[k], b.first[k], 1e-12);
    for (std::size_t k = 0; k < a.second.size(); ++k) EXPECT_NEAR(a.second[k], b.second[k], 1e-12);
  }
}

// --- component cases ----------------------------------------------------------------------------

TEST(Backbone, ShapeAndZeroCase) {
  ModelConfig c;
  c.vocab_size = 10;
  TieNetModel model(c, 1);
  Tape tape(false);
  Session s(model, tape);
  const Var X = s.backbone(random_image(c, 2));
  EXPECT_EQ(X.shape(), (Shape{4, 4, 32}));
  const Var Z = s.backbone(Tensor({c.image_size, c.image_size, 1}));
  for (double v : Z.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(InitHidden, ZeroAndBounded) {
  ModelConfig c = tiny_config(Mode::kImageReport);
  TieNetModel model(c, 4);
  Tape tape(false);
  Session s(model, tape);
  const auto z = s.init_hidden(tape.constant(Tensor({c.grid(), c.grid(), c.channels})));
  for (double v : z.h.value().data()) EXPECT_EQ(v, 0.0);
  std::mt19937_64 rng(1);
  const auto b = s.init_hidden(tape.constant(random_tensor({c.grid(), c.grid(), c.channels}, rng, 50.0)));
  for (double v : b.h.value().data()) EXPECT_LE(std::abs(v), 1.0);
}

TEST(SpatialAttention, UniformWhenScoresVanishAndSumsToOne) {
  ModelConfig c = tiny_config(Mode::kImageReport);
  TieNetModel model(c, 5);
  std::mt19937_64 rng(6);
  const Tensor X = random_tensor({c.grid(), c.grid(), c.channels}, rng);
  {
    TieNetModel zeroed = model;
    fill_param(zeroed, zeroed.slots().spatial_wh, 0.0);
    fill_param(zeroed, zeroed.slots().spatial_wx, 0.0);
    Tape tape(false);
    Session s(zeroed, tape);
    const auto a = s.spatial_attention(tape.constant(random_tensor({c.hidden}, rng)), s.visual_context(tape.constant(X)));
    for (double v : a.value().data()) EXPECT_NEAR(v, 1.0 / (c.grid() * c.grid()), 1e-15);
  }
  jitter(model, 9);
  Tape tape(false);
  Session s(model, tape);
  const auto a = s.spatial_attention(tape.constant(random_tensor({c.hidden}, rng)), s.visual_context(tape.constant(X)));
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-14);
}

TEST(LstmStep, ZeroWeightGateAlgebra) {
  ModelConfig c = tiny_config(Mode::kImageReport);
  TieNetModel model(c, 2);
  fill_param(model, model.slots().lstm_w, 0.0);
  fill_param(model, model.slots().lstm_b, 0.0);
  std::mt19937_64 rng(3);
  Tape tape(false);
  Session s(model, tape);
  const auto ctx = s.visual_context(tape.constant(random_tensor({c.grid(), c.grid(), c.channels}, rng)));
  const Tensor c_prev = random_tensor({c.hidden}, rng);
  LstmState prev{tape.constant(random_tensor({c.hidden}, rng)), tape.constant(c_prev)};
  const auto next = s.lstm_step(4, s.spatial_attention(prev.h, ctx), ctx, prev);
  for (std::size_t j = 0; j < c.hidden; ++j) {
    // i = f = o = 1/2 and g = tanh(0) = 0.
    EXPECT_NEAR(next.c.value()[j], 0.5 * c_prev[j], 1e-15);
    EXPECT_NEAR(next.h.value()[j], 0.5 * std::tanh(0.5 * c_prev[j]), 1e-15);
  }
}

TEST(Classifier, ZeroWeightsGiveHalf) {
  ModelConfig c = tiny_config(Mode::kImageReport);
  TieNetModel model(c, 2);
  fill_param(model, *model.slots().cls_hidden_w, 0.0);
  fill_param(model, model.slots().cls_w, 0.0);
  const Tensor img = random_image(c, 3);
  const auto seq = tokens({4, 5, 6});
  Tape tape(false);
  Session s(model, tape);
  const auto out = s.forward(&img, &seq, {});
  for (double p : out.probs.value().data()) EXPECT_EQ(p, 0.5);
}

namespace {

// Central differences on every coordinate of the listed parameters of a
// scalar built by f; returns the worst per-parameter norm relative error.
double component_error(const TieNetModel& model, const std::vector<std::size_t>& slots,
                       const std::function<Var(Session&)>& f) {
  Tape tape;
  Session s(model, tape);
  tape.backward(f(s));
  const auto grads = s.gradients();
  TieNetModel probe = model;
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t k : slots) {
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    auto& values = probe.mutable_parameters()[k].value;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      auto eval = [&](double v) {
        values[i] = v;
        Tape t(false);
        Session ps(probe, t);
        return f(ps).value()[0];
      };
      const double numeric = (eval(saved + h) - eval(saved - h)) / (2 * h);
      values[i] = saved;
      const double a = grads[k][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    worst = std::max(worst, std::sqrt(diff2) / std::max(1e-8, std::sqrt(a2) + std::sqrt(n2)));
  }
  return worst;
}

Var weighted_sum(Var v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum_all(ad::mul(v, v.tape().constant(random_tensor(v.shape(), rng))));
}

}  // namespace

TEST(ComponentGradients, BackboneInitAttentionLstm) {
  ModelConfig c = tiny_config(Mode::kImageReport);
  TieNetModel model(c, 12);
  jitter(model, 13, 0.2);
  const Tensor img = random_image(c, 15);
  const auto& sl = model.slots();

  std::vector<std::size_t> conv{sl.transition_kernel, sl.transition_bias};
  for (auto k : sl.conv_kernel) conv.push_back(k);
  for (auto k : sl.conv_bias) conv.push_back(k);
  EXPECT_LE(component_error(model, conv, [&](Session& s) { return weighted_sum(s.backbone(img), 1); }), 1e-4);

  EXPECT_LE(component_error(model, {sl.init_h_w, sl.init_h_b, sl.init_c_w, sl.init_c_b},
                            [&](Session& s) {
                              auto st = s.init_hidden(s.backbone(img));
                              return ad::add(weighted_sum(st.h, 2), weighted_sum(st.c, 3));
                            }),
            1e-4);

  EXPECT_LE(component_error(model, {sl.spatial_wh, sl.spatial_wx, sl.spatial_b, sl.spatial_v},
                            [&](Session& s) {
                              auto X = s.backbone(img);
                              auto ctx = s.visual_context(X);
                              return weighted_sum(s.spatial_attention(s.init_hidden(X).h, ctx), 4);
                            }),
            1e-4);

  EXPECT_LE(component_error(model, {sl.lstm_w, sl.lstm_b, sl.embedding},
                            [&](Session& s) {
                              auto X = s.backbone(img);
                              auto ctx = s.visual_context(X);
                              auto st = s.init_hidden(X);
                              auto next = s.lstm_step(5, s.spatial_attention(st.h, ctx), ctx, st);
                              return ad::add(weighted_sum(next.h, 5), weighted_sum(next.c, 6));
                            }),
            1e-4);

  const auto seq = tokens({4, 6, 5});
  EXPECT_LE(component_error(model, {sl.aete_ws1, sl.aete_ws2},
                            [&](Session& s) {
                              auto X = s.backbone(img);
                              auto ctx = s.visual_context(X);
                              auto enc = s.run_encoder(seq, ctx, s.init_hidden(X));
                              auto a = s.aete(enc.H, enc.H_rows);
                              auto sw = s.swgap(a.G, enc.maps, ctx);
                              return ad::add(weighted_sum(a.embedding, 7), weighted_sum(sw.pooled, 8));
                            }),
            1e-4);
}

// --- forward invariants ---------------------------------------------------------------------------

TEST(Forward, EncoderShapeForShortestReport) {
  ModelConfig c = tiny_config(Mode::kImageReport);
  TieNetModel model(c, 1);
  Tape tape(false);
  Session s(model, tape);
  const auto enc = s.run_encoder(tokens({}), s.zero_context(), s.init_hidden(tape.constant(Tensor({c.grid(), c.grid(), c.channels}))));
  EXPECT_EQ(enc.H.shape(), (Shape{c.hidden, 2}));
}

TEST(Forward, ReportModeIgnoresImage) {
  ModelConfig c = tiny_config(Mode::kReport);
  TieNetModel model(c, 21);
  jitter(model, 22);
  const auto seq = tokens({4, 5, 6, 4});
  Tape t1(false), t2(false);
  Session s1(model, t1), s2(model, t2);
  const auto a = s1.forward(nullptr, &seq, {});
  const Tensor img = random_image(c, 1);
  // An image passed to an R model is never read.
  const auto b = s2.forward(&img, &seq, {});
  EXPECT_EQ(a.probs.value(), b.probs.value());
}

TEST(Forward, BaselineIgnoresReport) {
  ModelConfig c = tiny_config(Mode::kImageBaseline);
  TieNetModel model(c, 23);
  const Tensor img = random_image(c, 2);
  const auto s1 = tokens({4, 5});
  const auto s2 = tokens({6, 6, 6, 5, 4});
  Tape t1(false), t2(false), t3(false);
  Session a(model, t1), b(model, t2), n(model, t3);
  const auto pa = a.forward(&img, &s1, {}).probs.value();
  EXPECT_EQ(pa, b.forward(&img, &s2, {}).probs.value());
  EXPECT_EQ(pa, n.forward(&img, nullptr, {}).probs.value());
}

TEST(Forward, ProbabilitiesAndTraceInvariants) {
  for (Mode mode : {Mode::kReport, Mode::kImageReport, Mode::kImageGenReport}) {
    ModelConfig c = tiny_config(mode);
    TieNetModel model(c, 30);
    jitter(model, 31);
    const Tensor img = random_image(c, 32);
    const auto seq = tokens({4, 5, 6});
    Tape tape(false);
    Session s(model, tape);
    ForwardOptions opt;
    opt.trace = true;
    const auto out = s.forward(mode == Mode::kReport ? nullptr : &img, mode == Mode::kImageGenReport ? nullptr : &seq, opt);
    for (double p : out.probs.value().data()) {
      EXPECT_TRUE(std::isfinite(p));
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0);
    }
    ASSERT_TRUE(out.trace);
    EXPECT_NO_THROW(validate_trace(*out.trace));
    std::ostringstream buf;
    EXPECT_NO_THROW(write_trace(buf, *out.trace));
  }
}

TEST(Forward, TraceValidationRejectsBrokenRows) {
  ModelConfig c = tiny_config(Mode::kImageReport);
  TieNetModel model(c, 1);
  const Tensor img = random_image(c, 1);
  const auto seq = tokens({4});
  Tape tape(false);
  Session s(model, tape);
  ForwardOptions opt;
  opt.trace = true;
  auto tr = *s.forward(&img, &seq, opt).trace;
  tr.G.at(0, 0) += 0.1;
  EXPECT_THROW(validate_trace(tr), std::runtime_error);
}

TEST(Generate, DeterministicAndCapped) {
  ModelConfig c = tiny_config(Mode::kImageGenReport);
  c.max_decode_len = 1;
  TieNetModel model(c, 40);
  jitter(model, 41);
  const Tensor img = random_image(c, 42);
  auto run = [&] {
    Tape tape(false);
    Session s(model, tape);
    return s.forward(&img, nullptr, {}).tokens;
  };
  const auto a = run();
  EXPECT_EQ(a, run());
  EXPECT_LE(a.length(), 3u);
  EXPECT_EQ(a.ids.front(), text::kStart);
  EXPECT_EQ(a.ids.back(), text::kEnd);
}

TEST(Generate, NeverEmitsPadOrStart) {
  ModelConfig c = tiny_config(Mode::kImageGenReport);
  TieNetModel model(c, 50);
  // Push PAD and START to the top of the output distribution.
  auto& b = model.mutable_parameters()[model.slots().out_b].value;
  b[text::kPad] = 50.0;
  b[text::kStart] = 40.0;
  const Tensor img = random_image(c, 51);
  for (bool sample : {false, true}) {
    Tape tape(false);
    Session s(model, tape);
    ForwardOptions opt;
    opt.decode.sample = sample;
    opt.decode.seed = 3;
    const auto seq = s.forward(&img, nullptr, opt).tokens;
    for (std::size_t i = 1; i < seq.length(); ++i) {
      EXPECT_NE(seq.ids[i], text::kPad);
      EXPECT_NE(seq.ids[i], text::kStart);
    }
  }
}

TEST(Model, SameSeedSameParameters) {
  const ModelConfig c = tiny_config(Mode::kImageGenReport);
  TieNetModel a(c, 9), b(c, 9), d(c, 10);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
  EXPECT_NE(a.parameters()[0].value, d.parameters()[0].value);
}

TEST(Model, LoadStateChecksNamesAndShapes) {
  const ModelConfig c = tiny_config(Mode::kImageReport);
  TieNetModel a(c, 1), b(c, 2);
  b.load_state(a.parameters());
  EXPECT_EQ(b.parameters()[3].value, a.parameters()[3].value);
  auto wrong = a.parameters();
  wrong[0].name = "nope";
  EXPECT_THROW(b.load_state(wrong), std::runtime_error);
}

TEST(ModelGradcheck, EveryGroupPassesAndCorruptionIsCaught) {
  const auto rows = check_model_gradients();
  for (const auto& r : rows) EXPECT_TRUE(r.passed) << mode_name(r.mode) << " " << r.group << " " << r.norm_error;

  ad::testing::corrupt_backward("tanh");
  GradcheckOptions opt;
  opt.modes = {Mode::kImageReport};
  const auto bad = check_model_gradients(opt);
  ad::testing::corrupt_backward("");
  EXPECT_FALSE(std::all_of(bad.begin(), bad.end(), [](const GroupCheck& r) { return r.passed; }));
}
