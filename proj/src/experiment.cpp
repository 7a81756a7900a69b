#include "tienet/experiment.hpp"

#include <fstream>
#include <numeric>
#include <stdexcept>

#include "tienet/random.hpp"

namespace tienet::experiment {

text::Vocabulary build_vocabulary(const data::Dataset& train_records, std::size_t min_count) {
  std::vector<std::vector<std::string>> corpus;
  corpus.reserve(train_records.size());
  for (const auto& r : train_records) corpus.push_back(text::tokenize(r.report));
  return text::Vocabulary::build(corpus, min_count);
}

ModelConfig model_config(const config::Settings& settings, const text::Vocabulary& vocab, std::size_t num_classes) {
  ModelConfig c = settings.model;
  c.vocab_size = vocab.size();
  c.num_classes = num_classes;
  c.image_size = settings.data.image_size;
  return c;
}

std::vector<std::string> save_bundle(const std::filesystem::path& dir, const Bundle& bundle) {
  std::filesystem::create_directories(dir);
  bundle.model->save(dir / kCheckpointFile);
  bundle.vocab.save(dir / kVocabFile);
  std::ofstream cfg(dir / kConfigFile);
  if (!cfg) throw std::runtime_error("cannot write " + (dir / kConfigFile).string());
  config::write(cfg, bundle.settings);
  return {kCheckpointFile, kVocabFile, kConfigFile};
}

Bundle load_bundle(const std::filesystem::path& dir) {
  Bundle b;
  config::apply(b.settings, config::load(dir / kConfigFile));
  b.vocab = text::Vocabulary::load(dir / kVocabFile);
  // The checkpoint fixes the label count through the classifier bias.
  const auto entries = load_checkpoint(dir / kCheckpointFile);
  std::size_t classes = 0;
  for (const auto& e : entries)
    if (e.name == "classifier.bias") classes = e.value.size();
  if (classes == 0) throw std::runtime_error("checkpoint in " + dir.string() + " has no classifier.bias");
  b.model = std::make_unique<TieNetModel>(model_config(b.settings, b.vocab, classes), b.settings.seed);
  b.model->load_state(entries);
  return b;
}

TrainedModel train_model(const config::Settings& settings, const data::Dataset& train_records,
                         const data::Dataset& val_records, const std::function<void(const train::EpochLog&)>& on_epoch) {
  if (train_records.empty()) throw std::invalid_argument("train: empty training split");
  if (val_records.empty()) throw std::invalid_argument("train: empty validation split");
  const std::size_t classes = train_records.front().labels.size();
  TrainedModel out;
  out.bundle.settings = settings;
  // The images decide the input side, whatever the data settings say.
  out.bundle.settings.data.image_size = train_records.front().image.dim(0);
  out.bundle.vocab = build_vocabulary(train_records, settings.min_count);
  out.bundle.model = std::make_unique<TieNetModel>(model_config(out.bundle.settings, out.bundle.vocab, classes), settings.seed);

  // The last label is "no finding" and does not make an image positive.
  const auto weights = train::compute_class_weights(train_records, classes - 1);
  train::TrainConfig tc = settings.train;
  tc.seed = settings.seed;
  const auto train_set = train::make_examples(train_records, out.bundle.vocab);
  const auto val_set = train::make_examples(val_records, out.bundle.vocab);
  out.result = train::train(*out.bundle.model, train_set, val_set, weights, tc, on_epoch);
  return out;
}

Evaluation evaluate(const Bundle& bundle, const data::Dataset& records, const DecodeOptions& decode) {
  Evaluation ev;
  ev.mode = bundle.model->mode();
  const auto examples = train::make_examples(records, bundle.vocab);
  ev.predictions = train::predict(*bundle.model, examples, decode, bundle.settings.train.threads);
  std::vector<std::vector<double>> scores;
  std::vector<std::vector<int>> labels;
  for (std::size_t i = 0; i < records.size(); ++i) {
    scores.push_back(ev.predictions[i].probs);
    labels.push_back(records[i].labels);
  }
  ev.roc = metrics::evaluate_roc(scores, labels);
  return ev;
}

std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("derangement: need at least two items");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> p(n);
  while (true) {
    std::iota(p.begin(), p.end(), 0);
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[uniform_index(rng, i)]);
    bool fixed = false;
    for (std::size_t i = 0; i < n && !fixed; ++i) fixed = p[i] == i;
    if (!fixed) return p;
  }
}

GenerationScores score_generation(const std::vector<train::Prediction>& predictions, const data::Dataset& records,
                                  const text::Vocabulary& vocab, std::uint64_t seed) {
  if (predictions.size() != records.size()) throw std::invalid_argument("score_generation: size mismatch");
  std::vector<metrics::Tokens> candidates, references, shuffled;
  for (std::size_t i = 0; i < records.size(); ++i) {
    candidates.push_back(text::decode(predictions[i].tokens, vocab));
    references.push_back(text::tokenize(records[i].report));
  }
  for (std::size_t j : derangement(records.size(), seed)) shuffled.push_back(references[j]);
  return {metrics::mean_text_score(candidates, references), metrics::mean_text_score(candidates, shuffled)};
}

std::vector<std::string> class_names(std::size_t num_classes) {
  const auto& classes = data::default_classes();
  std::vector<std::string> out;
  for (std::size_t m = 0; m + 1 < num_classes; ++m) out.push_back(classes.at(m).term);
  out.push_back(classes.back().term);
  return out;
}

}  // namespace tienet::experiment
