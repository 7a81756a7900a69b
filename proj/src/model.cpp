#include "tienet/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "tienet/random.hpp"

namespace tienet {

using ad::Var;

std::string_view mode_name(Mode mode) {
  switch (mode) {
    case Mode::kReport: return "r";
    case Mode::kImageReport: return "ir";
    case Mode::kImageGenReport: return "igr";
    case Mode::kImageBaseline: return "i-baseline";
  }
  return "?";
}

std::string_view mode_column(Mode mode) {
  switch (mode) {
    case Mode::kReport: return "R";
    case Mode::kImageReport: return "I+R";
    case Mode::kImageGenReport: return "I+GR";
    case Mode::kImageBaseline: return "I";
  }
  return "?";
}

Mode parse_mode(std::string_view name) {
  std::string s;
  for (char c : name) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "r") return Mode::kReport;
  if (s == "ir" || s == "i+r") return Mode::kImageReport;
  if (s == "igr" || s == "i+gr") return Mode::kImageGenReport;
  if (s == "i-baseline" || s == "i_baseline" || s == "i") return Mode::kImageBaseline;
  throw std::invalid_argument("unknown mode '" + std::string(name) + "' (expected r, ir, igr, i-baseline)");
}

// --- config -------------------------------------------------------------------

std::size_t ModelConfig::grid() const {
  std::size_t d = image_size;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) d = (d + 1) / 2;
  return d;
}

std::size_t ModelConfig::classifier_input() const {
  switch (mode) {
    case Mode::kReport: return hidden;
    case Mode::kImageReport:
    case Mode::kImageGenReport: return hidden + channels;
    case Mode::kImageBaseline: return channels;
  }
  return 0;
}

std::size_t ModelConfig::lstm_input() const { return embed + channels + (global_context ? channels : 0); }

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(std::string("model config: ") + name + " must be positive");
  };
  positive(image_size, "image_size");
  positive(image_channels, "image_channels");
  positive(channels, "channels");
  positive(hidden, "hidden");
  positive(embed, "embed");
  positive(att_hidden, "att_hidden");
  positive(att_rows, "att_rows");
  positive(spatial_hidden, "spatial_hidden");
  positive(num_classes, "num_classes");
  positive(max_decode_len, "max_decode_len");
  for (auto c : conv_channels) positive(c, "conv_channels");
  if (vocab_size <= text::kNumReserved) {
    throw std::invalid_argument("model config: vocab_size must exceed the reserved tokens");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("model config: alpha must be in [0,1]");
  if (!(penal_coeff >= 0.0)) throw std::invalid_argument("model config: penal_coeff must be nonnegative");
}

// --- parameters -------------------------------------------------------------------

namespace {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = uniform(rng, -bound, bound);
  return t;
}

double inv_sqrt(std::size_t n) { return 1.0 / std::sqrt(static_cast<double>(n)); }

}  // namespace

std::size_t TieNetModel::add_param(std::string name, Tensor value) {
  params_.push_back({std::move(name), std::move(value)});
  return params_.size() - 1;
}

TieNetModel::TieNetModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const auto& c = config_;
  std::mt19937_64 rng(seed);

  std::size_t cin = c.image_channels;
  for (std::size_t i = 0; i < c.conv_channels.size(); ++i) {
    const std::size_t cout = c.conv_channels[i];
    const std::string base = "backbone.conv" + std::to_string(i + 1);
    slots_.conv_kernel.push_back(
        add_param(base + ".kernel", uniform_tensor({cout, 3, 3, cin}, std::sqrt(6.0 / (9.0 * cin)), rng)));
    slots_.conv_bias.push_back(add_param(base + ".bias", Tensor::zeros({cout})));
    cin = cout;
  }
  slots_.transition_kernel = add_param("backbone.transition.kernel",
                                       uniform_tensor({c.channels, 1, 1, cin}, std::sqrt(6.0 / cin), rng));
  slots_.transition_bias = add_param("backbone.transition.bias", Tensor::zeros({c.channels}));

  slots_.init_h_w = add_param("init.h.weight", uniform_tensor({c.hidden, c.channels}, inv_sqrt(c.channels), rng));
  slots_.init_h_b = add_param("init.h.bias", Tensor::zeros({c.hidden}));
  slots_.init_c_w = add_param("init.c.weight", uniform_tensor({c.hidden, c.channels}, inv_sqrt(c.channels), rng));
  slots_.init_c_b = add_param("init.c.bias", Tensor::zeros({c.hidden}));

  slots_.spatial_wh = add_param("attention.spatial.w_h",
                                uniform_tensor({c.spatial_hidden, c.hidden}, inv_sqrt(c.hidden), rng));
  slots_.spatial_wx = add_param("attention.spatial.w_x",
                                uniform_tensor({c.spatial_hidden, c.channels}, inv_sqrt(c.channels), rng));
  slots_.spatial_b = add_param("attention.spatial.bias", Tensor::zeros({c.spatial_hidden}));
  slots_.spatial_v =
      add_param("attention.spatial.v", uniform_tensor({c.spatial_hidden}, inv_sqrt(c.spatial_hidden), rng));

  const std::size_t lstm_in = c.lstm_input() + c.hidden;
  slots_.lstm_w = add_param("lstm.weight", uniform_tensor({4 * c.hidden, lstm_in}, inv_sqrt(lstm_in), rng));
  Tensor lstm_b = Tensor::zeros({4 * c.hidden});
  for (std::size_t j = c.hidden; j < 2 * c.hidden; ++j) lstm_b[j] = 1.0;  // forget gate
  slots_.lstm_b = add_param("lstm.bias", std::move(lstm_b));

  slots_.embedding = add_param("embedding.table", text::init_embedding_table(c.vocab_size, c.embed, rng));

  slots_.aete_ws1 = add_param("aete.w_s1", uniform_tensor({c.att_hidden, c.hidden}, inv_sqrt(c.hidden), rng));
  slots_.aete_ws2 = add_param("aete.w_s2", uniform_tensor({c.att_rows, c.att_hidden}, inv_sqrt(c.att_hidden), rng));

  slots_.out_w = add_param("decoder.output.weight", uniform_tensor({c.vocab_size, c.hidden}, inv_sqrt(c.hidden), rng));
  slots_.out_b = add_param("decoder.output.bias", Tensor::zeros({c.vocab_size}));

  std::size_t cls_in = c.classifier_input();
  if (c.classifier_hidden > 0) {
    slots_.cls_hidden_w = add_param("classifier.hidden.weight",
                                    uniform_tensor({c.classifier_hidden, cls_in}, inv_sqrt(cls_in), rng));
    slots_.cls_hidden_b = add_param("classifier.hidden.bias", Tensor::zeros({c.classifier_hidden}));
    cls_in = c.classifier_hidden;
  }
  slots_.cls_w = add_param("classifier.weight", uniform_tensor({c.num_classes, cls_in}, inv_sqrt(cls_in), rng));
  slots_.cls_b = add_param("classifier.bias", Tensor::zeros({c.num_classes}));
}

std::size_t TieNetModel::param_index(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

std::size_t TieNetModel::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void TieNetModel::load_state(const std::vector<NamedTensor>& entries) {
  if (entries.size() != params_.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(entries.size()) + " tensors, model expects " +
                             std::to_string(params_.size()));
  }
  std::vector<Tensor> staged;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (entries[i].name != params_[i].name) {
      throw std::runtime_error("checkpoint entry " + std::to_string(i) + " is '" + entries[i].name + "', expected '" +
                               params_[i].name + "'");
    }
    if (entries[i].value.shape() != params_[i].value.shape()) {
      throw std::runtime_error("checkpoint shape mismatch for " + params_[i].name + ": " +
                               shape_str(entries[i].value.shape()) + " vs " + shape_str(params_[i].value.shape()));
    }
    staged.push_back(entries[i].value);
  }
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = std::move(staged[i]);
}

// --- session ------------------------------------------------------------------------

Session::Session(const TieNetModel& model, ad::Tape& tape)
    : model_(model), tape_(tape), bound_(model.parameters().size()) {}

Var Session::param(std::size_t index) {
  Var& v = bound_.at(index);
  if (!v.valid()) v = tape_.leaf(model_.parameters()[index].value);
  return v;
}

std::vector<Tensor> Session::gradients() const {
  std::vector<Tensor> out;
  out.reserve(bound_.size());
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    out.push_back(bound_[i].valid() ? bound_[i].grad() : Tensor::zeros(model_.parameters()[i].value.shape()));
  }
  return out;
}

Var Session::backbone(const Tensor& image) {
  const auto& c = config();
  if (image.shape() != Shape{c.image_size, c.image_size, c.image_channels}) {
    throw ShapeError("backbone: image shape " + shape_str(image.shape()) + ", expected " +
                     shape_str({c.image_size, c.image_size, c.image_channels}));
  }
  const auto& s = model_.slots();
  Var x = tape_.constant(image);
  for (std::size_t i = 0; i < s.conv_kernel.size(); ++i) {
    x = ad::relu(ad::conv2d(x, param(s.conv_kernel[i]), param(s.conv_bias[i]), 2, 1));
  }
  return ad::relu(ad::conv2d(x, param(s.transition_kernel), param(s.transition_bias), 1, 0));
}

Session::VisualContext Session::visual_context(Var X) {
  const auto& c = config();
  const std::size_t cells = c.grid() * c.grid();
  if (X.shape() != Shape{c.grid(), c.grid(), c.channels}) {
    throw ShapeError("visual context: X has shape " + shape_str(X.shape()));
  }
  VisualContext ctx;
  ctx.X_flat = ad::reshape(X, {cells, c.channels});
  ctx.X_flat_t = ad::transpose(ctx.X_flat);
  ctx.proj = ad::matmul(ctx.X_flat, ad::transpose(param(model_.slots().spatial_wx)));
  ctx.mean = ad::mean(ctx.X_flat, 0);
  return ctx;
}

Session::VisualContext Session::zero_context() {
  const auto& c = config();
  const std::size_t cells = c.grid() * c.grid();
  VisualContext ctx;
  ctx.zero = true;
  ctx.X_flat = tape_.constant(Tensor::zeros({cells, c.channels}));
  ctx.X_flat_t = tape_.constant(Tensor::zeros({c.channels, cells}));
  ctx.proj = tape_.constant(Tensor::zeros({cells, c.spatial_hidden}));
  ctx.mean = tape_.constant(Tensor::zeros({c.channels}));
  return ctx;
}

LstmState Session::init_hidden(Var X) {
  const auto& c = config();
  const auto& s = model_.slots();
  Var pooled = ad::mean(ad::reshape(X, {c.grid() * c.grid(), c.channels}), 0);
  return {ad::tanh(ad::linear(param(s.init_h_w), pooled, param(s.init_h_b))),
          ad::tanh(ad::linear(param(s.init_c_w), pooled, param(s.init_c_b)))};
}

Var Session::spatial_attention(Var h_prev, const VisualContext& ctx) {
  const auto& c = config();
  const std::size_t cells = c.grid() * c.grid();
  if (ctx.zero) {
    // Scores are identical across cells when X = 0.
    return tape_.constant(Tensor::full({cells}, 1.0 / static_cast<double>(cells)));
  }
  const auto& s = model_.slots();
  Var query = ad::linear(param(s.spatial_wh), h_prev, param(s.spatial_b));
  Var hidden = ad::tanh(ad::add(ctx.proj, ad::expand(query, 0, cells)));
  return ad::softmax(ad::matvec(hidden, param(s.spatial_v)), 0);
}

LstmState Session::lstm_step(std::size_t token, Var a_t, const VisualContext& ctx, LstmState prev) {
  const auto& c = config();
  const auto& s = model_.slots();
  if (token >= c.vocab_size) throw std::out_of_range("lstm_step: token index out of vocabulary");
  Var attended = ctx.zero ? tape_.constant(Tensor::zeros({c.channels})) : ad::matvec(ctx.X_flat_t, a_t);
  std::vector<Var> parts{ad::row(param(s.embedding), token), attended};
  if (c.global_context) parts.push_back(ctx.mean);
  parts.push_back(prev.h);
  Var z = ad::linear(param(s.lstm_w), ad::concat(parts, 0), param(s.lstm_b));
  const std::size_t d = c.hidden;
  Var in_gate = ad::sigmoid(ad::slice(z, 0, 0, d));
  Var forget_gate = ad::sigmoid(ad::slice(z, 0, d, 2 * d));
  Var out_gate = ad::sigmoid(ad::slice(z, 0, 2 * d, 3 * d));
  Var candidate = ad::tanh(ad::slice(z, 0, 3 * d, 4 * d));
  Var cell = ad::add(ad::mul(forget_gate, prev.c), ad::mul(in_gate, candidate));
  return {ad::mul(out_gate, ad::tanh(cell)), cell};
}

EncoderResult Session::run_encoder(const text::TokenSequence& tokens, const VisualContext& ctx, LstmState init) {
  const auto& c = config();
  const text::TokenSequence seq = text::strip_padding(tokens);
  if (seq.length() < 2) throw std::invalid_argument("run_encoder: sequence needs at least START and END");
  EncoderResult out;
  std::vector<Var> rows;
  LstmState state = init;
  for (std::size_t token : seq.ids) {
    Var a_t = spatial_attention(state.h, ctx);
    state = lstm_step(token, a_t, ctx, state);
    rows.push_back(ad::reshape(state.h, {1, c.hidden}));
    out.maps.push_back(a_t);
  }
  out.H_rows = ad::concat(rows, 0);
  out.H = ad::transpose(out.H_rows);
  return out;
}

AeteResult Session::aete(Var H, Var H_rows) {
  const auto& s = model_.slots();
  AeteResult out;
  Var scores = ad::matmul(param(s.aete_ws2), ad::tanh(ad::matmul(param(s.aete_ws1), H)));
  out.G = ad::softmax(scores, 1);
  out.M = ad::matmul(out.G, H_rows);
  out.embedding = ad::max(out.M, 0);
  return out;
}

SwgapResult Session::swgap(Var G, std::span<const Var> maps, const VisualContext& ctx) {
  const auto& c = config();
  const std::size_t cells = c.grid() * c.grid();
  if (maps.size() != G.shape()[1]) {
    throw ShapeError("swgap: " + std::to_string(maps.size()) + " spatial maps for G " + shape_str(G.shape()));
  }
  SwgapResult out;
  out.saliency = ad::max(G, 0);
  std::vector<Var> rows;
  for (const Var& m : maps) rows.push_back(ad::reshape(m, {1, cells}));
  Var stacked = ad::concat(rows, 0);  // [T, D*D]
  out.weighted = ad::matvec(ad::transpose(stacked), out.saliency);
  out.pooled = ad::matvec(ctx.X_flat_t, out.weighted);
  return out;
}

Var Session::attention_penalty(Var G) {
  const std::size_t r = G.shape()[0];
  Tensor eye({r, r});
  for (std::size_t i = 0; i < r; ++i) eye.at(i, i) = 1.0;
  Var diff = ad::sub(ad::matmul(G, ad::transpose(G)), tape_.constant(std::move(eye)));
  return ad::sum_all(ad::mul(diff, diff));
}

namespace {
Var apply_dropout(Var x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  Tensor m(x.shape());
  const double keep = 1.0 - p;
  for (auto& v : m.data()) v = bernoulli(rng, keep) ? 1.0 / keep : 0.0;
  return ad::mask(x, m);
}
}  // namespace

Var Session::classify(std::optional<Var> text, std::optional<Var> visual, const ForwardOptions& opt) {
  const auto& c = config();
  const auto& s = model_.slots();
  const bool want_text = c.mode != Mode::kImageBaseline;
  const bool want_visual = c.mode != Mode::kReport;
  if (text.has_value() != want_text || visual.has_value() != want_visual) {
    throw std::invalid_argument("classify: inputs do not match mode " + std::string(mode_name(c.mode)));
  }
  Var features;
  if (text && visual) {
    features = ad::concat({*text, *visual}, 0);
  } else {
    features = text ? *text : *visual;
  }
  std::mt19937_64 rng(opt.dropout_seed);
  const double p = opt.train ? opt.dropout : 0.0;
  features = apply_dropout(features, p, rng);
  if (s.cls_hidden_w) {
    features = ad::relu(ad::linear(param(*s.cls_hidden_w), features, param(*s.cls_hidden_b)));
    features = apply_dropout(features, p, rng);
  }
  return ad::linear(param(s.cls_w), features, param(s.cls_b));
}

Var Session::word_logits(Var H_rows) {
  const auto& s = model_.slots();
  const std::size_t T = H_rows.shape()[0];
  Var logits = ad::matmul(H_rows, ad::transpose(param(s.out_w)));
  return ad::add(logits, ad::expand(param(s.out_b), 0, T));
}

GenerationResult Session::generate(const VisualContext& ctx, LstmState init, const DecodeOptions& opt) {
  const auto& c = config();
  const auto& s = model_.slots();
  GenerationResult out;
  std::mt19937_64 rng(opt.seed);
  std::vector<Var> rows;
  LstmState state = init;
  out.tokens.ids.push_back(text::kStart);
  std::size_t generated = 0;
  while (true) {
    const std::size_t token = out.tokens.ids.back();
    Var a_t = spatial_attention(state.h, ctx);
    state = lstm_step(token, a_t, ctx, state);
    rows.push_back(ad::reshape(state.h, {1, c.hidden}));
    out.encoder.maps.push_back(a_t);
    if (token == text::kEnd) break;

    const Tensor& logits = ad::linear(param(s.out_w), state.h, param(s.out_b)).value();
    Tensor dist(logits.shape());
    const double temp = opt.sample ? std::max(opt.temperature, 1e-6) : 1.0;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < logits.size(); ++v) mx = std::max(mx, logits[v] / temp);
    double total = 0.0;
    for (std::size_t v = 0; v < logits.size(); ++v) total += dist[v] = std::exp(logits[v] / temp - mx);
    for (auto& v : dist.data()) v /= total;

    std::size_t next = text::kEnd;
    if (generated < c.max_decode_len) {
      // PAD and START are never emitted.
      if (opt.sample) {
        double mass = 0.0;
        for (std::size_t v = 0; v < dist.size(); ++v)
          if (v != text::kPad && v != text::kStart) mass += dist[v];
        double u = uniform01(rng) * mass;
        for (std::size_t v = 0; v < dist.size(); ++v) {
          if (v == text::kPad || v == text::kStart) continue;
          next = v;
          u -= dist[v];
          if (u < 0.0) break;
        }
      } else {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t v = 0; v < logits.size(); ++v) {
          if (v == text::kPad || v == text::kStart) continue;
          if (logits[v] > best) {
            best = logits[v];
            next = v;
          }
        }
      }
      out.distributions.push_back(std::move(dist));
      ++generated;
    }
    out.tokens.ids.push_back(next);
  }
  out.final_state = state;
  out.encoder.H_rows = ad::concat(rows, 0);
  out.encoder.H = ad::transpose(out.encoder.H_rows);
  return out;
}

ForwardResult Session::forward(const Tensor* image, const text::TokenSequence* tokens, const ForwardOptions& opt) {
  const auto& c = config();
  ForwardResult out;

  if (c.mode == Mode::kImageBaseline) {
    if (!image) throw std::invalid_argument("forward: mode i-baseline requires an image");
    VisualContext ctx = visual_context(backbone(*image));
    out.logits = classify(std::nullopt, ctx.mean, opt);
    out.probs = ad::sigmoid(out.logits);
    return out;
  }

  const bool uses_image = c.mode != Mode::kReport;
  const bool generates = c.mode == Mode::kImageGenReport && !opt.teacher_forcing;
  if (uses_image && !image) {
    throw std::invalid_argument("forward: mode " + std::string(mode_name(c.mode)) + " requires an image");
  }
  if (!generates && !tokens) {
    throw std::invalid_argument("forward: mode " + std::string(mode_name(c.mode)) + " requires a report");
  }

  VisualContext ctx;
  LstmState init;
  if (uses_image) {
    Var X = backbone(*image);
    ctx = visual_context(X);
    init = init_hidden(X);
  } else {
    ctx = zero_context();
    init = init_hidden(tape_.constant(Tensor::zeros({c.grid(), c.grid(), c.channels})));
  }

  EncoderResult enc;
  if (generates) {
    GenerationResult gen = generate(ctx, init, opt.decode);
    out.tokens = std::move(gen.tokens);
    enc = std::move(gen.encoder);
  } else {
    out.tokens = text::strip_padding(*tokens);
    out.tokens.validate(c.vocab_size);
    enc = run_encoder(out.tokens, ctx, init);
  }

  AeteResult text_emb = aete(enc.H, enc.H_rows);
  out.penalty = attention_penalty(text_emb.G);
  std::optional<SwgapResult> pooled;
  if (uses_image) pooled = swgap(text_emb.G, enc.maps, ctx);

  out.logits = classify(text_emb.embedding, pooled ? std::optional<Var>(pooled->pooled) : std::nullopt, opt);
  out.probs = ad::sigmoid(out.logits);

  if (opt.generation_loss && !generates) {
    const std::size_t T = out.tokens.length();
    out.word_log_probs = ad::log_softmax(ad::slice(word_logits(enc.H_rows), 0, 0, T - 1), 1);
  }

  if (opt.trace) {
    AttentionTrace tr;
    const std::size_t D = c.grid();
    for (std::size_t id : out.tokens.ids) {
      tr.tokens.push_back(id == text::kStart ? std::string(text::kStartToken)
                          : id == text::kEnd ? std::string(text::kEndToken)
                                             : std::to_string(id));
    }
    tr.G = text_emb.G.value();
    tr.M = text_emb.M.value();
    for (const Var& m : enc.maps) tr.maps.push_back(m.value().reshaped({D, D}));
    if (pooled) {
      tr.saliency = pooled->saliency.value();
      tr.weighted_map = pooled->weighted.value().reshaped({D, D});
    } else {
      Tensor sal({tr.G.dim(1)});
      for (std::size_t t = 0; t < sal.size(); ++t) {
        double best = tr.G.at(0, t);
        for (std::size_t i = 1; i < tr.G.dim(0); ++i) best = std::max(best, tr.G.at(i, t));
        sal[t] = best;
      }
      Tensor ws({D, D});
      for (std::size_t t = 0; t < tr.maps.size(); ++t)
        for (std::size_t k = 0; k < D * D; ++k) ws[k] += tr.maps[t][k] * sal[t];
      tr.saliency = std::move(sal);
      tr.weighted_map = std::move(ws);
    }
    out.trace = std::move(tr);
  }
  return out;
}

// --- trace -----------------------------------------------------------------------------

void validate_trace(const AttentionTrace& tr, double tol) {
  auto fail = [](const std::string& what) { throw std::runtime_error("attention trace: " + what); };
  if (!tr.has_text()) fail("missing G");
  if (tr.G.rank() != 2) fail("G must be 2-D");
  const std::size_t r = tr.G.dim(0), T = tr.G.dim(1);
  if (!tr.tokens.empty() && tr.tokens.size() != T) fail("token count differs from G columns");
  for (std::size_t i = 0; i < r; ++i) {
    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t) total += tr.G.at(i, t);
    if (std::abs(total - 1.0) > tol) fail("row " + std::to_string(i) + " of G sums to " + std::to_string(total));
  }
  if (tr.maps.size() != T) fail("expected one spatial map per token");
  for (std::size_t t = 0; t < T; ++t) {
    double total = 0.0;
    for (double v : tr.maps[t].data()) total += v;
    if (std::abs(total - 1.0) > tol) fail("spatial map " + std::to_string(t) + " sums to " + std::to_string(total));
  }
  if (tr.saliency.size() != T) fail("saliency length differs from T");
  for (std::size_t t = 0; t < T; ++t) {
    double best = tr.G.at(0, t);
    for (std::size_t i = 1; i < r; ++i) best = std::max(best, tr.G.at(i, t));
    if (std::abs(best - tr.saliency[t]) > tol) fail("saliency " + std::to_string(t) + " is not the column max of G");
  }
}

namespace {
void write_matrix(std::ostream& out, const std::string& label, const Tensor& m, std::size_t rows, std::size_t cols) {
  out << label << ' ' << rows << ' ' << cols << '\n';
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) out << (j ? "\t" : "") << m[i * cols + j];
    out << '\n';
  }
}
}  // namespace

void write_trace(std::ostream& out, const AttentionTrace& tr) {
  validate_trace(tr);
  const auto old_precision = out.precision(17);
  out << "tokens " << tr.tokens.size() << '\n';
  for (std::size_t i = 0; i < tr.tokens.size(); ++i) out << (i ? "\t" : "") << tr.tokens[i];
  out << '\n';
  write_matrix(out, "G", tr.G, tr.G.dim(0), tr.G.dim(1));
  write_matrix(out, "M", tr.M, tr.M.dim(0), tr.M.dim(1));
  for (std::size_t t = 0; t < tr.maps.size(); ++t) {
    write_matrix(out, "spatial." + std::to_string(t), tr.maps[t], tr.maps[t].dim(0), tr.maps[t].dim(1));
  }
  write_matrix(out, "saliency", tr.saliency, 1, tr.saliency.size());
  write_matrix(out, "a_ws", tr.weighted_map, tr.weighted_map.dim(0), tr.weighted_map.dim(1));
  out.precision(old_precision);
}

}  // namespace tienet
