#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tienet/autodiff.hpp"
#include "tienet/data.hpp"
#include "tienet/model.hpp"
#include "tienet/text.hpp"

namespace tienet::train {

// --- losses ------------------------------------------------------------------------

struct ClassWeights {
  double beta_p = 0.5;
  double beta_n = 0.5;
  std::vector<double> lambda;  // (Q - Q_m) / Q
  bool degenerate = false;     // |P| or |N| was zero; betas fell back to 0.5
};

// Throws std::invalid_argument when counts.total == 0. A degenerate split
// logs a warning to stderr and falls back to beta_p = beta_n = 0.5.
ClassWeights class_weights(const data::ClassCounts& counts);
ClassWeights compute_class_weights(const data::Dataset& records, std::optional<std::size_t> no_finding_class);

// Weighted binary cross-entropy of one sample; probs are clamped to
// [1e-7, 1 - 1e-7] before the logs.
ad::Var classification_loss(ad::Var probs, const std::vector<int>& labels, const ClassWeights& w);
// Same loss summed over a batch and divided by its size.
double classification_loss(const std::vector<std::vector<double>>& probs, const std::vector<std::vector<int>>& labels,
                           const ClassWeights& w);

inline constexpr double kProbClamp = 1e-7;

// word_log_probs[t] predicts target.ids[t + 1]; mean negative log-likelihood.
ad::Var generative_loss(ad::Var word_log_probs, const text::TokenSequence& target);

// alpha * L_C + (1 - alpha) * L_R + penal_coeff * penalty. Invalid l_r or
// penalty handles contribute nothing.
ad::Var joint_loss(ad::Var l_c, ad::Var l_r, double alpha, ad::Var penalty, double penal_coeff);
double joint_loss(double l_c, double l_r, double alpha, double penalty, double penal_coeff);

// --- optimiser -------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double l2 = 0.0;  // added to the gradient as l2 * param before the moments
};

class Adam {
 public:
  Adam(const std::vector<NamedTensor>& params, AdamConfig config);

  void step(std::vector<NamedTensor>& params, const std::vector<Tensor>& grads);
  std::uint64_t steps() const { return t_; }
  const std::vector<Tensor>& first_moment() const { return m_; }
  const std::vector<Tensor>& second_moment() const { return v_; }
  AdamConfig& config() { return config_; }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

// Replaces each non-special token with OOV with probability p.
text::TokenSequence report_dropout(const text::TokenSequence& tokens, double p, std::uint64_t seed);

// --- training loop ----------------------------------------------------------------------

struct Example {
  std::size_t id = 0;
  Tensor image;
  text::TokenSequence tokens;
  std::vector<int> labels;
};

std::vector<Example> make_examples(const data::Dataset& records, const text::Vocabulary& vocab);

enum class Selection { kAuc, kLoss };

struct TrainConfig {
  double lr = 3e-3;
  std::size_t batch_size = 8;
  std::size_t accumulation = 1;  // micro-batches per optimiser step
  double dropout = 0.5;
  double l2 = 1e-4;
  double report_dropout = 0.2;  // applied in mode ir only
  std::size_t epochs = 40;
  std::uint64_t seed = 1;
  // Back-propagate L_C (plus the attention penalty) only. Defaults to true
  // for r and ir, false otherwise.
  std::optional<bool> annotation_only;
  Selection select_by = Selection::kAuc;
  std::size_t threads = 1;

  void validate() const;
  bool annotation(Mode mode) const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_lc = 0.0;
  double train_lr = 0.0;
  double val_objective = 0.0;  // val L_C on the inference path
  std::optional<double> val_auc;
  double seconds = 0.0;
};

void write_log_header(std::ostream& out);
void write_log_line(std::ostream& out, const EpochLog& e);

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;  // 0: initial parameters were never beaten
};

// Trains in place and leaves the best validation parameters in the model.
// on_epoch, when set, sees each log line as soon as it is complete.
TrainResult train(TieNetModel& model, const std::vector<Example>& train_set, const std::vector<Example>& val_set,
                  const ClassWeights& weights, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

// Gradients of one sample's training loss, as used by train(). Exposed for
// the gradient checker and the accumulation tests.
struct SampleLoss {
  double loss = 0.0, l_c = 0.0, l_r = 0.0;
  std::vector<Tensor> grads;
};
SampleLoss sample_gradients(const TieNetModel& model, const Example& ex, const ClassWeights& weights,
                            const TrainConfig& config, std::size_t epoch);
// The same loss without building a gradient tape.
double sample_loss(const TieNetModel& model, const Example& ex, const ClassWeights& weights, const TrainConfig& config,
                   std::size_t epoch);

// --- inference --------------------------------------------------------------------------

struct Prediction {
  std::vector<double> probs;
  text::TokenSequence tokens;  // report used by the text path, if any
};

std::vector<Prediction> predict(const TieNetModel& model, const std::vector<Example>& examples,
                                const DecodeOptions& decode = {}, std::size_t threads = 1);

// Runs fn(i) for i in [0, n) over up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace tienet::train
