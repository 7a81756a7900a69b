#pragma once

// TieNet: conv backbone -> grid X, attention LSTM over the report, attention
// encoded text embedding (AETE) over its hidden states, saliency weighted
// global average pooling (SW-GAP) of X, and a multi-label classifier.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tienet/autodiff.hpp"
#include "tienet/checkpoint.hpp"
#include "tienet/tensor.hpp"
#include "tienet/text.hpp"

namespace tienet {

// R: report only. IR: image + report. IGR: image + self-generated report.
// ImageBaseline: GAP(X) only.
enum class Mode { kReport, kImageReport, kImageGenReport, kImageBaseline };

std::string_view mode_name(Mode mode);    // "r", "ir", "igr", "i-baseline"
std::string_view mode_column(Mode mode);  // "R", "I+R", "I+GR", "I"
Mode parse_mode(std::string_view name);

struct ModelConfig {
  std::size_t image_size = 32;  // input side
  std::size_t image_channels = 1;
  std::vector<std::size_t> conv_channels = {8, 16, 32};  // one stride-2 3x3 block each
  std::size_t channels = 32;                             // C, transition layer output
  std::size_t hidden = 32;                               // d_h
  std::size_t embed = 32;                                // d_w
  std::size_t att_hidden = 64;                           // s
  std::size_t att_rows = 5;                              // r
  std::size_t spatial_hidden = 32;
  std::size_t num_classes = 15;
  std::size_t vocab_size = 0;
  Mode mode = Mode::kImageReport;
  std::size_t max_decode_len = 48;
  double alpha = 0.3;
  double penal_coeff = 1.0;
  bool global_context = true;         // feed meanpool(X) to the LSTM
  std::size_t classifier_hidden = 0;  // 0: single linear layer

  std::size_t grid() const;  // D
  std::size_t classifier_input() const;
  std::size_t lstm_input() const;
  void validate() const;
};

// Interpretability record of one forward pass.
struct AttentionTrace {
  std::vector<std::string> tokens;  // rendered sequence, START..END
  Tensor G;                         // [r, T]
  Tensor M;                         // [r, d_h]
  std::vector<Tensor> maps;         // T x [D, D]
  Tensor saliency;                  // [T]
  Tensor weighted_map;              // a_ws [D, D]

  bool has_text() const { return !G.empty(); }
};

// Throws std::runtime_error naming the first violated invariant.
void validate_trace(const AttentionTrace& trace, double tol = 1e-6);
void write_trace(std::ostream& out, const AttentionTrace& trace);

struct DecodeOptions {
  bool sample = false;  // greedy argmax when false
  double temperature = 1.0;
  std::uint64_t seed = 0;
};

struct ForwardOptions {
  bool train = false;
  double dropout = 0.0;  // on the classifier input, train only
  std::uint64_t dropout_seed = 0;
  bool generation_loss = false;  // compute teacher-forced word log-probs
  bool teacher_forcing = false;  // IGR: encode the given report instead of generating
  bool trace = false;
  DecodeOptions decode;
};

class TieNetModel {
 public:
  TieNetModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  Mode mode() const { return config_.mode; }

  const std::vector<NamedTensor>& parameters() const { return params_; }
  // The one mutation entry point, used by optimisers and checkpoint loading.
  std::vector<NamedTensor>& mutable_parameters() { return params_; }
  std::size_t param_index(std::string_view name) const;
  std::size_t param_count() const;

  // Replaces parameter values by name; names and shapes must match exactly.
  void load_state(const std::vector<NamedTensor>& entries);
  void save(const std::filesystem::path& path) const { save_checkpoint(path, params_); }
  void load(const std::filesystem::path& path) { load_state(load_checkpoint(path)); }

  // Parameter indices, resolved once.
  struct Slots {
    std::vector<std::size_t> conv_kernel, conv_bias;
    std::size_t transition_kernel, transition_bias;
    std::size_t init_h_w, init_h_b, init_c_w, init_c_b;
    std::size_t spatial_wh, spatial_wx, spatial_b, spatial_v;
    std::size_t lstm_w, lstm_b;
    std::size_t embedding;
    std::size_t aete_ws1, aete_ws2;
    std::size_t out_w, out_b;
    std::optional<std::size_t> cls_hidden_w, cls_hidden_b;
    std::size_t cls_w, cls_b;
  };
  const Slots& slots() const { return slots_; }

 private:
  std::size_t add_param(std::string name, Tensor value);

  ModelConfig config_;
  std::vector<NamedTensor> params_;
  Slots slots_{};
};

struct LstmState {
  ad::Var h, c;
};

struct EncoderResult {
  ad::Var H;                    // [d_h, T]
  ad::Var H_rows;               // [T, d_h]
  std::vector<ad::Var> maps;    // T x [D*D]
};

struct AeteResult {
  ad::Var G;          // [r, T]
  ad::Var M;          // [r, d_h]
  ad::Var embedding;  // [d_h]
};

struct SwgapResult {
  ad::Var saliency;   // [T]
  ad::Var weighted;   // a_ws [D*D]
  ad::Var pooled;     // [C]
};

struct ForwardResult {
  ad::Var logits;          // [M]
  ad::Var probs;           // [M]
  ad::Var word_log_probs;  // [T-1, V]; invalid unless requested
  ad::Var penalty;         // ||G G^T - I||_F^2; invalid without a text path
  text::TokenSequence tokens;
  std::optional<AttentionTrace> trace;
};

struct GenerationResult {
  text::TokenSequence tokens;
  std::vector<Tensor> distributions;  // per generated token, softmax over V
  LstmState final_state;
  EncoderResult encoder;  // states over the full generated sequence
};

// One forward pass of a model on one tape. Parameters are bound lazily as
// tape leaves; their gradients are read back with gradients().
class Session {
 public:
  Session(const TieNetModel& model, ad::Tape& tape);

  ad::Tape& tape() { return tape_; }
  const ModelConfig& config() const { return model_.config(); }
  ad::Var param(std::size_t index);
  // Gradient per model parameter, zeros for unused ones.
  std::vector<Tensor> gradients() const;

  ad::Var backbone(const Tensor& image);                  // -> [D, D, C]
  LstmState init_hidden(ad::Var X);
  // Precomputed per-image projections for spatial attention.
  struct VisualContext {
    ad::Var X_flat;     // [D*D, C]
    ad::Var X_flat_t;   // [C, D*D]
    ad::Var proj;       // [D*D, spatial_hidden]
    ad::Var mean;       // [C]
    bool zero = false;  // mode R: no image
  };
  VisualContext visual_context(ad::Var X);
  ad::Var spatial_attention(ad::Var h_prev, const VisualContext& ctx);  // -> [D*D]
  LstmState lstm_step(std::size_t token, ad::Var a_t, const VisualContext& ctx, LstmState prev);
  EncoderResult run_encoder(const text::TokenSequence& tokens, const VisualContext& ctx, LstmState init);
  AeteResult aete(ad::Var H, ad::Var H_rows);
  SwgapResult swgap(ad::Var G, std::span<const ad::Var> maps, const VisualContext& ctx);
  ad::Var attention_penalty(ad::Var G);
  ad::Var classify(std::optional<ad::Var> text, std::optional<ad::Var> visual, const ForwardOptions& opt);
  ad::Var word_logits(ad::Var H_rows);  // [T, V]
  GenerationResult generate(const VisualContext& ctx, LstmState init, const DecodeOptions& opt);

  VisualContext zero_context();

  // Image input is required by IR, IGR, ImageBaseline; tokens by R and IR
  // (and by IGR when training with teacher forcing).
  ForwardResult forward(const Tensor* image, const text::TokenSequence* tokens, const ForwardOptions& opt);

 private:
  const TieNetModel& model_;
  ad::Tape& tape_;
  std::vector<ad::Var> bound_;
};

}  // namespace tienet
