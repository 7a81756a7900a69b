#include "tienet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace tienet::metrics {

std::optional<RocCurve> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("roc_curve: scores/labels length mismatch");
  std::size_t pos = 0;
  for (int y : labels) pos += y != 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Area accumulated in pair counts so the result is exact before the final
  // division: each step adds fp_delta * (tp_prev + tp_new) / 2.
  RocCurve curve;
  curve.points.emplace_back(0.0, 0.0);
  double tp = 0, fp = 0, twice_area = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    double dtp = 0, dfp = 0;
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? dtp : dfp) += 1;
    twice_area += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    curve.points.emplace_back(fp / static_cast<double>(neg), tp / static_cast<double>(pos));
  }
  curve.auc = twice_area / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return curve;
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  auto curve = roc_curve(scores, labels);
  if (!curve) return std::nullopt;
  return curve->auc;
}

Aggregate aggregate(std::span<const std::optional<double>> aucs, std::span<const std::size_t> counts) {
  if (aucs.size() != counts.size()) throw std::invalid_argument("aggregate: aucs/counts length mismatch");
  double sum = 0, wsum = 0, wtot = 0;
  std::size_t defined = 0;
  for (std::size_t m = 0; m < aucs.size(); ++m) {
    if (!aucs[m]) continue;
    sum += *aucs[m];
    ++defined;
    if (counts[m] > 0) {
      wsum += static_cast<double>(counts[m]) * *aucs[m];
      wtot += static_cast<double>(counts[m]);
    }
  }
  if (defined == 0 || wtot == 0) throw std::invalid_argument("aggregate: no class with a defined AUC and nonzero count");
  return {sum / static_cast<double>(defined), wsum / wtot};
}

std::vector<std::optional<double>> RocResult::aucs() const {
  std::vector<std::optional<double>> out;
  for (const auto& c : curves) out.push_back(c ? std::optional<double>(c->auc) : std::nullopt);
  return out;
}

RocResult evaluate_roc(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<int>>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("evaluate_roc: sample count mismatch");
  RocResult out;
  if (scores.empty()) return out;
  const std::size_t classes = labels.front().size();
  std::vector<double> s(scores.size());
  std::vector<int> y(scores.size());
  for (std::size_t m = 0; m < classes; ++m) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      s[i] = scores[i].at(m);
      y[i] = labels[i].at(m);
      n += y[i] != 0;
    }
    out.curves.push_back(roc_curve(s, y));
    out.counts.push_back(n);
  }
  const auto aucs = out.aucs();
  const bool any = std::any_of(aucs.begin(), aucs.end(), [](const auto& a) { return a.has_value(); });
  if (any) out.summary = aggregate(aucs, out.counts);
  return out;
}

// --- text ---------------------------------------------------------------------------

namespace {
std::map<Tokens, std::size_t> ngram_counts(const Tokens& t, std::size_t k) {
  std::map<Tokens, std::size_t> out;
  for (std::size_t i = 0; i + k <= t.size(); ++i) ++out[Tokens(t.begin() + i, t.begin() + i + k)];
  return out;
}
}  // namespace

double clipped_precision(const Tokens& candidate, const Tokens& reference, std::size_t k) {
  if (candidate.size() < k) return 0.0;
  const auto cand = ngram_counts(candidate, k);
  const auto ref = ngram_counts(reference, k);
  std::size_t matched = 0;
  for (const auto& [gram, n] : cand) {
    auto it = ref.find(gram);
    if (it != ref.end()) matched += std::min(n, it->second);
  }
  return static_cast<double>(matched) / static_cast<double>(candidate.size() - k + 1);
}

double bleu(const Tokens& candidate, const Tokens& reference, std::size_t n) {
  if (n < 1 || n > 4) throw std::invalid_argument("bleu: n must be in 1..4");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double p = clipped_precision(candidate, reference, k);
    if (p == 0.0) return 0.0;
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / static_cast<double>(n));
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

double meteor_simple(const Tokens& candidate, const Tokens& reference) {
  // Each candidate token takes the first unused identical reference token.
  std::vector<bool> used(reference.size(), false);
  std::vector<std::ptrdiff_t> align(candidate.size(), -1);
  std::size_t matches = 0;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      if (!used[j] && reference[j] == candidate[i]) {
        used[j] = true;
        align[i] = static_cast<std::ptrdiff_t>(j);
        ++matches;
        break;
      }
    }
  }
  if (matches == 0) return 0.0;
  // A chunk is a maximal run adjacent in both candidate and reference.
  std::size_t chunks = 0;
  std::ptrdiff_t last = -2;
  bool in_run = false;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (align[i] < 0) {
      in_run = false;
      continue;
    }
    if (!in_run || align[i] != last + 1) ++chunks;
    in_run = true;
    last = align[i];
  }
  const double m = static_cast<double>(matches);
  const double p = m / static_cast<double>(candidate.size());
  const double r = m / static_cast<double>(reference.size());
  const double f = 10.0 * p * r / (r + 9.0 * p);
  const double frag = static_cast<double>(chunks) / m;
  return f * (1.0 - 0.5 * frag * frag * frag);
}

TextScore score_text(const Tokens& candidate, const Tokens& reference) {
  return {bleu(candidate, reference, 1), bleu(candidate, reference, 2), bleu(candidate, reference, 3),
          bleu(candidate, reference, 4), rouge_l(candidate, reference), meteor_simple(candidate, reference)};
}

TextScore mean_text_score(const std::vector<Tokens>& candidates, const std::vector<Tokens>& references) {
  if (candidates.size() != references.size()) throw std::invalid_argument("mean_text_score: length mismatch");
  TextScore total;
  if (candidates.empty()) return total;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const TextScore s = score_text(candidates[i], references[i]);
    total.bleu1 += s.bleu1;
    total.bleu2 += s.bleu2;
    total.bleu3 += s.bleu3;
    total.bleu4 += s.bleu4;
    total.rouge_l += s.rouge_l;
    total.meteor += s.meteor;
  }
  const double n = static_cast<double>(candidates.size());
  for (double* v : {&total.bleu1, &total.bleu2, &total.bleu3, &total.bleu4, &total.rouge_l, &total.meteor}) *v /= n;
  return total;
}

// --- export ----------------------------------------------------------------------------

void write_roc_curve(std::ostream& out, const RocCurve& curve) {
  out << "fpr\ttpr\n";
  char buf[64];
  for (const auto& [fpr, tpr] : curve.points) {
    std::snprintf(buf, sizeof buf, "%.17g\t%.17g\n", fpr, tpr);
    out << buf;
  }
}

void write_summary(std::ostream& out, const std::vector<std::string>& class_names,
                   const std::vector<SummaryColumn>& columns, const std::vector<std::size_t>& counts) {
  auto cell = [](const std::optional<double>& v) {
    if (!v) return std::string("--");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  out << "class";
  for (const auto& c : columns) out << '\t' << c.name;
  out << "\t#\n";
  for (std::size_t m = 0; m < class_names.size(); ++m) {
    out << class_names[m];
    for (const auto& c : columns) out << '\t' << cell(c.aucs.at(m));
    out << '\t' << counts.at(m) << '\n';
  }
  std::vector<std::optional<Aggregate>> agg;
  for (const auto& c : columns) {
    try {
      agg.push_back(aggregate(c.aucs, counts));
    } catch (const std::invalid_argument&) {
      agg.push_back(std::nullopt);
    }
  }
  out << "AVG";
  for (const auto& a : agg) out << '\t' << cell(a ? std::optional<double>(a->average) : std::nullopt);
  out << "\t--\n#wAVG";
  for (const auto& a : agg) out << '\t' << cell(a ? std::optional<double>(a->weighted) : std::nullopt);
  out << "\t--\n";
}

}  // namespace tienet::metrics
