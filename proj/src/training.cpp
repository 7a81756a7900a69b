#include "tienet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "tienet/metrics.hpp"
#include "tienet/random.hpp"

namespace tienet::train {

using ad::Var;

// --- losses ------------------------------------------------------------------------

ClassWeights class_weights(const data::ClassCounts& counts) {
  if (counts.total == 0) throw std::invalid_argument("class weights: empty dataset");
  ClassWeights w;
  const double q = static_cast<double>(counts.total);
  for (std::size_t qm : counts.positives) w.lambda.push_back((q - static_cast<double>(qm)) / q);
  const double p = static_cast<double>(counts.with_finding);
  const double n = static_cast<double>(counts.without_finding);
  if (counts.with_finding == 0 || counts.without_finding == 0) {
    std::cerr << "warning: class weights: |P| = " << counts.with_finding << ", |N| = " << counts.without_finding
              << "; using beta_P = beta_N = 0.5\n";
    w.degenerate = true;
    return w;
  }
  w.beta_p = n / (p + n);
  w.beta_n = p / (p + n);
  return w;
}

ClassWeights compute_class_weights(const data::Dataset& records, std::optional<std::size_t> no_finding_class) {
  return class_weights(data::class_counts(records, no_finding_class));
}

namespace {
void check_labels(std::size_t n, const std::vector<int>& labels, const ClassWeights& w) {
  if (labels.size() != n || w.lambda.size() != n) {
    throw std::invalid_argument("classification loss: " + std::to_string(n) + " probabilities, " +
                                std::to_string(labels.size()) + " labels, " + std::to_string(w.lambda.size()) +
                                " class weights");
  }
}
}  // namespace

Var classification_loss(Var probs, const std::vector<int>& labels, const ClassWeights& w) {
  const std::size_t n = probs.size();
  check_labels(n, labels, w);
  Tensor pos({n}), neg({n});
  for (std::size_t m = 0; m < n; ++m) {
    pos[m] = labels[m] ? -w.lambda[m] * w.beta_p : 0.0;
    neg[m] = labels[m] ? 0.0 : -w.lambda[m] * w.beta_n;
  }
  Var f = ad::clamp(probs, kProbClamp, 1.0 - kProbClamp);
  Var log_f = ad::log(f);
  Var log_1mf = ad::log(ad::shift(ad::scale(f, -1.0), 1.0));
  return ad::sum_all(ad::add(ad::mask(log_f, pos), ad::mask(log_1mf, neg)));
}

double classification_loss(const std::vector<std::vector<double>>& probs, const std::vector<std::vector<int>>& labels,
                           const ClassWeights& w) {
  if (probs.size() != labels.size()) throw std::invalid_argument("classification loss: batch size mismatch");
  if (probs.empty()) throw std::invalid_argument("classification loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    check_labels(probs[i].size(), labels[i], w);
    for (std::size_t m = 0; m < probs[i].size(); ++m) {
      const double f = std::clamp(probs[i][m], kProbClamp, 1.0 - kProbClamp);
      total += labels[i][m] ? -w.lambda[m] * w.beta_p * std::log(f) : -w.lambda[m] * w.beta_n * std::log(1.0 - f);
    }
  }
  return total / static_cast<double>(probs.size());
}

Var generative_loss(Var word_log_probs, const text::TokenSequence& target) {
  const auto& shape = word_log_probs.shape();
  if (shape.size() != 2 || target.length() < 2 || shape[0] != target.length() - 1) {
    throw std::invalid_argument("generative loss: " + shape_str(shape) + " log-probabilities for a sequence of " +
                                std::to_string(target.length()) + " tokens");
  }
  std::vector<std::size_t> next(target.ids.begin() + 1, target.ids.end());
  return ad::scale(ad::sum_all(ad::pick(word_log_probs, next)), -1.0 / static_cast<double>(next.size()));
}

Var joint_loss(Var l_c, Var l_r, double alpha, Var penalty, double penal_coeff) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("joint loss: alpha must be in [0,1]");
  Var total = ad::scale(l_c, alpha);
  if (l_r.valid()) total = ad::add(total, ad::scale(l_r, 1.0 - alpha));
  if (penalty.valid() && penal_coeff != 0.0) total = ad::add(total, ad::scale(penalty, penal_coeff));
  return total;
}

double joint_loss(double l_c, double l_r, double alpha, double penalty, double penal_coeff) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("joint loss: alpha must be in [0,1]");
  return alpha * l_c + (1.0 - alpha) * l_r + penal_coeff * penalty;
}

// --- optimiser -------------------------------------------------------------------------

Adam::Adam(const std::vector<NamedTensor>& params, AdamConfig config) : config_(config) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.shape());
    v_.emplace_back(p.value.shape());
  }
}

void Adam::step(std::vector<NamedTensor>& params, const std::vector<Tensor>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("adam: parameter/gradient count mismatch");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& theta = params[k].value;
    const Tensor& g = grads[k];
    if (g.shape() != theta.shape()) {
      throw ShapeError("adam: gradient " + shape_str(g.shape()) + " for parameter " + params[k].name + " " +
                       shape_str(theta.shape()));
    }
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i] + config_.l2 * theta[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      const double update = config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      theta[i] -= update;
    }
  }
}

text::TokenSequence report_dropout(const text::TokenSequence& tokens, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("report dropout: p must be in [0,1]");
  text::TokenSequence out = tokens;
  if (p == 0.0) return out;
  std::mt19937_64 rng(seed);
  for (auto& id : out.ids) {
    if (id < text::kNumReserved && id != text::kOov) continue;
    if (bernoulli(rng, p)) id = text::kOov;
  }
  return out;
}

// --- training loop ----------------------------------------------------------------------

std::vector<Example> make_examples(const data::Dataset& records, const text::Vocabulary& vocab) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    out.push_back({r.id, r.image, text::encode(text::tokenize(r.report), vocab), r.labels});
  }
  return out;
}

void TrainConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string("train config: ") + name + " must be in [0,1]");
  };
  prob(dropout, "dropout");
  prob(report_dropout, "report_dropout");
  if (!(lr >= 0.0)) throw std::invalid_argument("train config: lr must be nonnegative");
  if (!(l2 >= 0.0)) throw std::invalid_argument("train config: l2 must be nonnegative");
  if (batch_size == 0 || accumulation == 0 || threads == 0) {
    throw std::invalid_argument("train config: batch_size, accumulation and threads must be positive");
  }
}

bool TrainConfig::annotation(Mode mode) const {
  if (annotation_only) return *annotation_only;
  return mode == Mode::kReport || mode == Mode::kImageReport;
}

void write_log_header(std::ostream& out) { out << "epoch\ttrain_lc\ttrain_lr\tval_objective\tval_auc\tseconds\n"; }

void write_log_line(std::ostream& out, const EpochLog& e) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%.6f\t%.6f\t", e.epoch, e.train_lc, e.train_lr, e.val_objective);
  out << buf;
  if (e.val_auc) {
    std::snprintf(buf, sizeof buf, "%.6f", *e.val_auc);
    out << buf;
  } else {
    out << "--";
  }
  std::snprintf(buf, sizeof buf, "\t%.3f\n", e.seconds);
  out << buf;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace {
constexpr std::uint64_t kOrderStream = 0x0d3e;
constexpr std::uint64_t kDropoutStream = 0xd509;
constexpr std::uint64_t kReportStream = 0x5e9d;
}  // namespace

namespace {

struct LossParts {
  Var total, l_c, l_r;
};

LossParts build_loss(Session& session, const TieNetModel& model, const Example& ex, const ClassWeights& weights,
                     const TrainConfig& config, std::size_t epoch) {
  const Mode mode = model.mode();
  const bool annotation = config.annotation(mode);

  ForwardOptions opt;
  opt.train = true;
  opt.dropout = config.dropout;
  opt.dropout_seed = derive_seed(derive_seed(config.seed, kDropoutStream), epoch, ex.id);
  opt.teacher_forcing = true;
  opt.generation_loss = !annotation && mode != Mode::kImageBaseline;

  text::TokenSequence tokens = ex.tokens;
  if (mode == Mode::kImageReport && config.report_dropout > 0.0) {
    tokens = report_dropout(tokens, config.report_dropout,
                            derive_seed(derive_seed(config.seed, kReportStream), epoch, ex.id));
  }
  const bool uses_image = mode != Mode::kReport;
  const bool uses_text = mode != Mode::kImageBaseline;
  ForwardResult fr = session.forward(uses_image ? &ex.image : nullptr, uses_text ? &tokens : nullptr, opt);

  LossParts out;
  out.l_c = classification_loss(fr.probs, ex.labels, weights);
  if (mode == Mode::kImageBaseline) {
    out.total = out.l_c;
  } else if (annotation) {
    out.total = joint_loss(out.l_c, Var{}, 1.0, fr.penalty, model.config().penal_coeff);
  } else {
    // The generator is scored against the clean report even when its input
    // tokens were dropped.
    out.l_r = generative_loss(fr.word_log_probs, text::strip_padding(ex.tokens));
    out.total = joint_loss(out.l_c, out.l_r, model.config().alpha, fr.penalty, model.config().penal_coeff);
  }
  return out;
}

}  // namespace

SampleLoss sample_gradients(const TieNetModel& model, const Example& ex, const ClassWeights& weights,
                            const TrainConfig& config, std::size_t epoch) {
  ad::Tape tape;
  Session session(model, tape);
  const LossParts parts = build_loss(session, model, ex, weights, config, epoch);
  SampleLoss out;
  out.loss = parts.total.value().item();
  out.l_c = parts.l_c.value().item();
  out.l_r = parts.l_r.valid() ? parts.l_r.value().item() : 0.0;
  tape.backward(parts.total);
  out.grads = session.gradients();
  return out;
}

double sample_loss(const TieNetModel& model, const Example& ex, const ClassWeights& weights, const TrainConfig& config,
                   std::size_t epoch) {
  ad::Tape tape(false);
  Session session(model, tape);
  return build_loss(session, model, ex, weights, config, epoch).total.value().item();
}

namespace {

struct ValScore {
  double objective = 0.0;
  std::optional<double> auc;
};

ValScore validate(const TieNetModel& model, const std::vector<Example>& val_set, const ClassWeights& weights,
                  std::size_t threads) {
  const auto preds = predict(model, val_set, {}, threads);
  std::vector<std::vector<double>> probs;
  std::vector<std::vector<int>> labels;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    probs.push_back(preds[i].probs);
    labels.push_back(val_set[i].labels);
  }
  ValScore s;
  s.objective = classification_loss(probs, labels, weights);
  const auto roc = metrics::evaluate_roc(probs, labels);
  if (roc.summary) s.auc = roc.summary->average;
  return s;
}

bool better(const ValScore& a, const ValScore& b, Selection by) {
  if (by == Selection::kAuc && a.auc && b.auc && *a.auc != *b.auc) return *a.auc > *b.auc;
  return a.objective < b.objective;
}

void add_scaled(std::vector<Tensor>& acc, const std::vector<Tensor>& g, double k) {
  for (std::size_t p = 0; p < acc.size(); ++p) {
    double* a = acc[p].data().data();
    const double* b = g[p].data().data();
    for (std::size_t i = 0; i < acc[p].size(); ++i) a[i] += k * b[i];
  }
}

}  // namespace

TrainResult train(TieNetModel& model, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const ClassWeights& weights, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training split");
  if (val_set.empty()) throw std::invalid_argument("train: empty validation split");

  auto& params = model.mutable_parameters();
  Adam adam(params, {config.lr, 0.9, 0.999, 1e-8, config.l2});
  TrainResult result;

  ValScore best = validate(model, val_set, weights, config.threads);
  std::vector<NamedTensor> best_params = params;

  std::vector<std::size_t> order(train_set.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(config.seed, kOrderStream, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

    double sum_lc = 0.0, sum_lr = 0.0;
    std::vector<Tensor> acc;
    std::size_t in_window = 0, micro_batches = 0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - b);
      std::vector<SampleLoss> losses(n);
      parallel_for(n, config.threads, [&](std::size_t i) {
        losses[i] = sample_gradients(model, train_set[order[b + i]], weights, config, epoch);
      });
      // Micro-batch mean gradient, re-weighted by its size so a window of k
      // micro-batches matches one batch of the same samples.
      std::vector<Tensor> micro = std::move(losses[0].grads);
      for (std::size_t i = 1; i < n; ++i) add_scaled(micro, losses[i].grads, 1.0);
      for (auto& t : micro)
        for (auto& v : t.data()) v /= static_cast<double>(n);
      for (const auto& l : losses) {
        sum_lc += l.l_c;
        sum_lr += l.l_r;
      }
      if (acc.empty()) {
        for (auto& t : micro)
          for (auto& v : t.data()) v *= static_cast<double>(n);
        acc = std::move(micro);
      } else {
        add_scaled(acc, micro, static_cast<double>(n));
      }
      in_window += n;
      ++micro_batches;
      const bool last = b + n == order.size();
      if (micro_batches == config.accumulation || last) {
        for (auto& t : acc)
          for (auto& v : t.data()) v /= static_cast<double>(in_window);
        adam.step(params, acc);
        acc.clear();
        in_window = 0;
        micro_batches = 0;
      }
    }

    const ValScore score = validate(model, val_set, weights, config.threads);
    EpochLog e;
    e.epoch = epoch;
    e.train_lc = sum_lc / static_cast<double>(order.size());
    e.train_lr = sum_lr / static_cast<double>(order.size());
    e.val_objective = score.objective;
    e.val_auc = score.auc;
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(e);
    if (better(score, best, config.select_by)) {
      best = score;
      best_params = params;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(e);
  }
  params = std::move(best_params);
  return result;
}

// --- inference --------------------------------------------------------------------------

std::vector<Prediction> predict(const TieNetModel& model, const std::vector<Example>& examples,
                                const DecodeOptions& decode, std::size_t threads) {
  std::vector<Prediction> out(examples.size());
  const Mode mode = model.mode();
  const bool uses_image = mode != Mode::kReport;
  const bool uses_report = mode == Mode::kReport || mode == Mode::kImageReport;
  parallel_for(examples.size(), threads, [&](std::size_t i) {
    ad::Tape tape(false);
    Session session(model, tape);
    ForwardOptions opt;
    opt.decode = decode;
    opt.decode.seed = derive_seed(decode.seed, examples[i].id);
    const auto fr = session.forward(uses_image ? &examples[i].image : nullptr,
                                    uses_report ? &examples[i].tokens : nullptr, opt);
    const Tensor& p = fr.probs.value();
    out[i].probs.assign(p.data().begin(), p.data().end());
    out[i].tokens = fr.tokens;
  });
  return out;
}

}  // namespace tienet::train
