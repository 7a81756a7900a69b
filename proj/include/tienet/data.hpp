#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tienet/tensor.hpp"

namespace tienet::data {

struct Record {
  std::size_t id = 0;
  std::string split;
  Tensor image;  // [S, S, 1]
  std::string report;
  std::vector<int> labels;

  friend bool operator==(const Record&, const Record&) = default;
};

using Dataset = std::vector<Record>;

// One record per line, tab separated:
//   id  split  SxSxC:<8 hex digits per float32 pixel>  "report"  l1,l2,...
// Pixel values must be exactly representable as float32.
void write_dataset(std::ostream& out, const Dataset& records);
// Throws std::runtime_error naming the offending line.
Dataset read_dataset(std::istream& in);
void save_dataset(const std::filesystem::path& path, const Dataset& records);
Dataset load_dataset(const std::filesystem::path& path);

struct ClassCounts {
  std::vector<std::size_t> positives;  // Q_m
  std::size_t total = 0;               // Q
  std::size_t with_finding = 0;        // |P|
  std::size_t without_finding = 0;     // |N|
};

// |P| counts records with at least one positive label other than
// `no_finding_class` (when given); |N| the rest.
ClassCounts class_counts(const Dataset& records, std::optional<std::size_t> no_finding_class);

// --- synthetic generator -------------------------------------------------------

struct ClassInfo {
  std::string term;
  std::string finding;           // class-specific description used in reports
  std::size_t row = 0, col = 0;  // motif cell on the 4x4 layout
  std::vector<std::string> shape;  // 5 strings of 5 chars, '#' bright
};

// Class table for the default 15-class layout; the last class is
// "no finding" and has no motif.
const std::vector<ClassInfo>& default_classes();

struct SyntheticSpec {
  std::size_t num_classes = 15;
  std::size_t train_size = 2000;
  std::size_t val_size = 250;
  std::size_t test_size = 500;
  std::size_t image_size = 32;
  double noise = 0.6;
  double intensity = 1.0;
  double negation_prob = 0.3;
  double prior_scale = 1.0;  // multiplies the built-in per-class priors
  bool shuffle_phrases = false;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t no_finding_class() const { return num_classes - 1; }
};

struct SplitSet {
  Dataset train, val, test;
};

// Per-class label priors before prior_scale.
std::vector<double> default_priors(std::size_t num_classes);

SplitSet generate(const SyntheticSpec& spec);

// Renders motif(s) for the given labels with no noise.
Tensor render_clean(const SyntheticSpec& spec, const std::vector<int>& labels);

// Report sentences. A report lists positive phrases in class order, then the
// negation phrases joined and closed by a single " .".
std::string positive_phrase(std::size_t cls, std::size_t variant);
std::string negation_phrase(std::size_t cls);  // "no <term>"

// Per-class test AUC of an L2-regularised logistic regression on raw pixels
// trained on `train`; classes without both labels in `test` report nullopt.
std::vector<std::optional<double>> pixel_probe_auc(const Dataset& train, const Dataset& test,
                                                   std::size_t num_classes, std::size_t epochs = 60);

}  // namespace tienet::data
