#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tienet::metrics {

struct RocCurve {
  // (fpr, tpr), from (0,0) to (1,1), nondecreasing in both.
  std::vector<std::pair<double, double>> points;
  double auc = 0.0;
};

// Trapezoidal area over the full threshold sweep; tied scores form one
// threshold, which credits tied positive/negative pairs with 0.5.
// nullopt unless both classes are present.
std::optional<RocCurve> roc_curve(std::span<const double> scores, std::span<const int> labels);
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);

struct Aggregate {
  double average = 0.0;   // macro mean over defined AUCs
  double weighted = 0.0;  // sum n_m AUC_m / sum n_m over defined AUCs with n_m > 0
};

// Throws std::invalid_argument if no class has both a defined AUC and n_m > 0.
Aggregate aggregate(std::span<const std::optional<double>> aucs, std::span<const std::size_t> counts);

struct RocResult {
  std::vector<std::optional<RocCurve>> curves;  // per class
  std::vector<std::size_t> counts;              // positives per class
  std::optional<Aggregate> summary;

  std::vector<std::optional<double>> aucs() const;
};

// scores/labels are [sample][class].
RocResult evaluate_roc(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<int>>& labels);

// --- text ------------------------------------------------------------------------

using Tokens = std::vector<std::string>;

// Single-reference BLEU-n, no smoothing.
double bleu(const Tokens& candidate, const Tokens& reference, std::size_t n);
// Clipped k-gram precision used inside bleu().
double clipped_precision(const Tokens& candidate, const Tokens& reference, std::size_t k);
double rouge_l(const Tokens& candidate, const Tokens& reference);
std::size_t lcs_length(const Tokens& a, const Tokens& b);
// Exact-match METEOR: F = 10PR/(R+9P), times 1 - 0.5 (chunks/matches)^3.
double meteor_simple(const Tokens& candidate, const Tokens& reference);

struct TextScore {
  double bleu1 = 0, bleu2 = 0, bleu3 = 0, bleu4 = 0, rouge_l = 0, meteor = 0;
};

TextScore score_text(const Tokens& candidate, const Tokens& reference);
// Mean of per-pair scores.
TextScore mean_text_score(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references);

// --- export -----------------------------------------------------------------------

void write_roc_curve(std::ostream& out, const RocCurve& curve);

struct SummaryColumn {
  std::string name;  // e.g. "I+R"
  std::vector<std::optional<double>> aucs;
};

// Class rows, then AVG and #wAVG; undefined cells print "--".
void write_summary(std::ostream& out, const std::vector<std::string>& class_names,
                   const std::vector<SummaryColumn>& columns, const std::vector<std::size_t>& counts);

}  // namespace tienet::metrics
