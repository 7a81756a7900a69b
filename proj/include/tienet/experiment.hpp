#pragma once

// Glue between datasets, models and metrics shared by the command-line tool
// and the end-to-end tests.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "tienet/config.hpp"
#include "tienet/data.hpp"
#include "tienet/metrics.hpp"
#include "tienet/model.hpp"
#include "tienet/text.hpp"
#include "tienet/training.hpp"

namespace tienet::experiment {

text::Vocabulary build_vocabulary(const data::Dataset& train_records, std::size_t min_count);

// Model config of `settings` sized for `vocab` and the dataset's label count.
ModelConfig model_config(const config::Settings& settings, const text::Vocabulary& vocab, std::size_t num_classes);

// A trained model directory: model.ckpt, vocab.txt, config.cfg.
struct Bundle {
  config::Settings settings;
  text::Vocabulary vocab;
  std::unique_ptr<TieNetModel> model;
};

inline constexpr const char* kCheckpointFile = "model.ckpt";
inline constexpr const char* kVocabFile = "vocab.txt";
inline constexpr const char* kConfigFile = "config.cfg";

// Returns the file names written, relative to dir.
std::vector<std::string> save_bundle(const std::filesystem::path& dir, const Bundle& bundle);
Bundle load_bundle(const std::filesystem::path& dir);

struct TrainedModel {
  Bundle bundle;
  train::TrainResult result;
};

// Builds the vocabulary from `train_records`, initialises a model from
// settings.seed and trains it.
TrainedModel train_model(const config::Settings& settings, const data::Dataset& train_records,
                         const data::Dataset& val_records,
                         const std::function<void(const train::EpochLog&)>& on_epoch = {});

struct Evaluation {
  Mode mode = Mode::kImageReport;
  std::vector<train::Prediction> predictions;
  metrics::RocResult roc;
};

Evaluation evaluate(const Bundle& bundle, const data::Dataset& records, const DecodeOptions& decode = {});

struct GenerationScores {
  metrics::TextScore generated;  // each report against its own reference
  metrics::TextScore shuffled;   // against the reference of another record
};

// Shuffled pairing uses a seeded derangement of the references.
GenerationScores score_generation(const std::vector<train::Prediction>& predictions, const data::Dataset& records,
                                  const text::Vocabulary& vocab, std::uint64_t seed);

std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed);

std::vector<std::string> class_names(std::size_t num_classes);

}  // namespace tienet::experiment
