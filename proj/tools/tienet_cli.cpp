// tienet: generate synthetic data, train and evaluate TieNet models, write
// reports with attention traces, and check gradients.
//
// Settings are resolved as: built-in defaults, then --config FILE, then
// individual --<key> flags.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tienet/autodiff.hpp"
#include "tienet/config.hpp"
#include "tienet/data.hpp"
#include "tienet/experiment.hpp"
#include "tienet/gradcheck.hpp"
#include "tienet/metrics.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace tienet;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string now_utc() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Settings validation failures are usage errors, not runtime failures.
template <class F>
void usage_check(F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

fs::path default_out() {
  if (const char* env = std::getenv("TIENET_OUT"); env && *env) return env;
  return "tienet_out";
}

// Flags shared by every subcommand plus one --<key> flag per setting.
struct Common {
  std::string config_file;
  std::string out;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::map<std::string, std::string> raw;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key = value settings file");
    app->add_option("--out", out, "output directory (default $TIENET_OUT or ./tienet_out)");
    for (const auto& k : config::keys()) {
      std::string names = "--" + k.name;
      std::string dashed = k.name;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      if (dashed != k.name) names += ",--" + dashed;
      app->add_option(names, raw[k.name], k.help);
    }
  }

  config::Settings resolve(CLI::App* app, config::Settings base = {}) const {
    if (!config_file.empty()) config::apply(base, config::load(config_file));
    for (const auto& k : config::keys()) {
      if (app->count("--" + k.name) > 0) config::apply(base, k.name, raw.at(k.name));
    }
    return base;
  }

  fs::path out_dir() const { return out.empty() ? default_out() : fs::path(out); }
};

json settings_json(const config::Settings& s) {
  json j = json::object();
  for (const auto& k : config::keys()) j[k.name] = k.get(s);
  return j;
}

struct Manifest {
  json j;
  fs::path dir;

  Manifest(std::string command, fs::path out) : dir(std::move(out)) {
    j["command"] = std::move(command);
    j["started_at"] = now_utc();
    j["artifacts"] = json::array();
    j["metrics"] = json::object();
  }
  void artifact(const fs::path& rel, const std::string& kind) {
    j["artifacts"].push_back({{"path", rel.generic_string()}, {"kind", kind}});
  }
  void write() {
    j["finished_at"] = now_utc();
    std::ofstream out(dir / "manifest.json");
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

data::Dataset load_split(const fs::path& data_dir, const std::string& split) {
  const fs::path p = data_dir / (split + ".tsv");
  if (!fs::exists(p)) throw UsageError("dataset split not found: " + p.string());
  return data::load_dataset(p);
}

std::string fmt(double v, const char* f = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// --- gen --------------------------------------------------------------------------------

int cmd_gen(const config::Settings& s, const fs::path& out, bool probe) {
  data::SyntheticSpec spec = s.data;
  spec.seed = s.seed;
  usage_check([&] { spec.validate(); });
  fs::create_directories(out);
  Manifest m("gen", out);
  m.j["seed"] = s.seed;
  m.j["config"] = settings_json(s);

  const auto sets = data::generate(spec);
  const std::pair<const char*, const data::Dataset*> splits[] = {
      {"train", &sets.train}, {"val", &sets.val}, {"test", &sets.test}};
  for (const auto& [name, ds] : splits) {
    data::save_dataset(out / (std::string(name) + ".tsv"), *ds);
    m.artifact(std::string(name) + ".tsv", "dataset");
    m.j["metrics"][std::string(name) + "_records"] = ds->size();
  }
  {
    std::ofstream cfg(out / "spec.cfg");
    config::write(cfg, s);
  }
  m.artifact("spec.cfg", "config");

  if (probe) {
    const auto aucs = data::pixel_probe_auc(sets.train, sets.test, spec.num_classes);
    std::ostringstream t;
    t << "class\tprobe_auc\n";
    const auto names = experiment::class_names(spec.num_classes);
    for (std::size_t c = 0; c < aucs.size(); ++c) t << names[c] << '\t' << (aucs[c] ? fmt(*aucs[c], "%.4f") : "--") << '\n';
    write_text(out / "probe.tsv", t.str());
    m.artifact("probe.tsv", "probe");
  }
  m.write();
  std::cout << "wrote " << sets.train.size() << "/" << sets.val.size() << "/" << sets.test.size()
            << " records to " << out.string() << "\n";
  return 0;
}

// --- train ------------------------------------------------------------------------------

int cmd_train(const config::Settings& s, const fs::path& data_dir, const fs::path& out) {
  usage_check([&] { s.train.validate(); });
  const auto train_records = load_split(data_dir, "train");
  const auto val_records = load_split(data_dir, "val");
  fs::create_directories(out);
  Manifest m("train", out);
  m.j["seed"] = s.seed;
  m.j["mode"] = std::string(mode_name(s.model.mode));
  m.j["config"] = settings_json(s);
  m.j["data"] = data_dir.string();

  std::ofstream log(out / "train_log.tsv");
  train::write_log_header(log);
  train::write_log_header(std::cout);
  auto trained = experiment::train_model(s, train_records, val_records, [&](const train::EpochLog& e) {
    train::write_log_line(log, e);
    log.flush();
    train::write_log_line(std::cout, e);
  });
  log.close();

  for (const auto& f : experiment::save_bundle(out, trained.bundle)) {
    m.artifact(f, f == experiment::kCheckpointFile ? "checkpoint" : f == experiment::kVocabFile ? "vocabulary" : "config");
  }
  m.artifact("train_log.tsv", "log");
  m.j["checkpoint"] = experiment::kCheckpointFile;
  m.j["metrics"]["best_epoch"] = trained.result.best_epoch;
  if (!trained.result.log.empty() && trained.result.best_epoch > 0) {
    const auto& best = trained.result.log[trained.result.best_epoch - 1];
    m.j["metrics"]["best_val_objective"] = best.val_objective;
    if (best.val_auc) m.j["metrics"]["best_val_auc"] = *best.val_auc;
  }
  m.write();
  std::cout << "best epoch " << trained.result.best_epoch << "; model written to " << out.string() << "\n";
  return 0;
}

// --- eval -------------------------------------------------------------------------------

int cmd_eval(const std::vector<std::string>& model_dirs, const fs::path& data_dir, const std::string& split,
             const fs::path& out, const DecodeOptions& decode, bool oracle_scores) {
  if (model_dirs.empty()) throw UsageError("eval: at least one --model directory is required");
  const auto records = load_split(data_dir, split);
  if (records.empty()) throw UsageError("eval: split '" + split + "' is empty");
  const std::size_t classes = records.front().labels.size();
  const auto names = experiment::class_names(classes);

  fs::create_directories(out);
  Manifest m("eval", out);
  m.j["data"] = data_dir.string();
  m.j["split"] = split;
  m.j["models"] = json::array();

  // Table columns follow the layout R, I+R, I, I+GR.
  const Mode column_order[] = {Mode::kReport, Mode::kImageReport, Mode::kImageBaseline, Mode::kImageGenReport};
  struct Column {
    Mode mode;
    std::string dir;
    experiment::Evaluation ev;
    std::optional<experiment::GenerationScores> text;
  };
  std::vector<Column> columns;
  std::vector<std::size_t> counts;
  for (const auto& dir : model_dirs) {
    auto bundle = experiment::load_bundle(dir);
    Column col{bundle.model->mode(), dir, {}, std::nullopt};
    if (oracle_scores) {
      col.ev.mode = col.mode;
      std::vector<std::vector<double>> scores;
      std::vector<std::vector<int>> labels;
      for (const auto& r : records) {
        scores.emplace_back(r.labels.begin(), r.labels.end());
        labels.push_back(r.labels);
      }
      col.ev.roc = metrics::evaluate_roc(scores, labels);
    } else {
      col.ev = experiment::evaluate(bundle, records, decode);
      if (col.mode == Mode::kImageGenReport && records.size() > 1) {
        col.text = experiment::score_generation(col.ev.predictions, records, bundle.vocab, decode.seed);
      }
    }
    counts = col.ev.roc.counts;
    m.j["models"].push_back({{"dir", dir}, {"mode", std::string(mode_name(col.mode))}, {"seed", bundle.settings.seed}});
    columns.push_back(std::move(col));
  }
  std::stable_sort(columns.begin(), columns.end(), [&](const Column& a, const Column& b) {
    auto rank = [&](Mode x) { return std::find(std::begin(column_order), std::end(column_order), x) - std::begin(column_order); };
    return rank(a.mode) < rank(b.mode);
  });

  std::vector<metrics::SummaryColumn> summary;
  std::map<std::string, int> seen;
  for (auto& col : columns) {
    std::string name(mode_column(col.mode));
    if (seen[name]++ > 0) name += "#" + std::to_string(seen[name]);
    summary.push_back({name, col.ev.roc.aucs()});

    const std::string tag = std::string(mode_name(col.mode)) + (seen[std::string(mode_column(col.mode))] > 1
                                                                    ? "_" + std::to_string(seen[std::string(mode_column(col.mode))])
                                                                    : "");
    const fs::path roc_dir = fs::path("roc") / tag;
    fs::create_directories(out / roc_dir);
    for (std::size_t c = 0; c < classes; ++c) {
      if (!col.ev.roc.curves[c]) continue;
      std::string file = names[c];
      std::replace(file.begin(), file.end(), ' ', '_');
      char prefix[24];
      std::snprintf(prefix, sizeof prefix, "%02zu_", c);
      const fs::path rel = roc_dir / (prefix + file + ".tsv");
      std::ofstream f(out / rel);
      metrics::write_roc_curve(f, *col.ev.roc.curves[c]);
      m.artifact(rel, "roc");
    }
    if (col.ev.roc.summary) {
      m.j["metrics"][name] = {{"auc_avg", col.ev.roc.summary->average}, {"auc_wavg", col.ev.roc.summary->weighted}};
    }
    if (col.text) {
      std::ostringstream t;
      t << "pairing\tbleu1\tbleu2\tbleu3\tbleu4\trouge_l\tmeteor\n";
      for (const auto& [label, sc] : {std::pair{"generated", col.text->generated}, std::pair{"shuffled", col.text->shuffled}}) {
        t << label << '\t' << fmt(sc.bleu1) << '\t' << fmt(sc.bleu2) << '\t' << fmt(sc.bleu3) << '\t' << fmt(sc.bleu4)
          << '\t' << fmt(sc.rouge_l) << '\t' << fmt(sc.meteor) << '\n';
      }
      const std::string rel = "text_metrics_" + tag + ".tsv";
      write_text(out / rel, t.str());
      m.artifact(rel, "text-metrics");
      m.j["metrics"][name]["bleu1"] = col.text->generated.bleu1;
      m.j["metrics"][name]["bleu1_shuffled"] = col.text->shuffled.bleu1;
    }
  }
  std::ostringstream table;
  metrics::write_summary(table, names, summary, counts);
  write_text(out / "summary.tsv", table.str());
  m.artifact("summary.tsv", "summary");
  m.write();
  std::cout << table.str();
  return 0;
}

// --- generate ---------------------------------------------------------------------------

int cmd_generate(const fs::path& model_dir, const fs::path& dataset, std::size_t index, const fs::path& out,
                 const DecodeOptions& decode) {
  auto bundle = experiment::load_bundle(model_dir);
  const Mode mode = bundle.model->mode();
  if (mode == Mode::kImageBaseline) throw UsageError("generate: mode i-baseline has no text path");
  const auto records = data::load_dataset(dataset);
  if (index >= records.size()) {
    throw UsageError("generate: index " + std::to_string(index) + " out of range for " + std::to_string(records.size()) +
                     " records");
  }
  const auto& rec = records[index];
  const auto ex = train::make_examples({rec}, bundle.vocab).front();

  ad::Tape tape(false);
  Session session(*bundle.model, tape);
  ForwardOptions opt;
  opt.trace = true;
  opt.decode = decode;
  const auto fr = session.forward(mode == Mode::kReport ? nullptr : &ex.image,
                                  mode == Mode::kImageGenReport ? nullptr : &ex.tokens, opt);

  AttentionTrace trace = *fr.trace;
  for (std::size_t t = 0; t < trace.tokens.size(); ++t) trace.tokens[t] = bundle.vocab.token(fr.tokens.ids[t]);

  fs::create_directories(out);
  Manifest m("generate", out);
  m.j["mode"] = std::string(mode_name(mode));
  m.j["checkpoint"] = (fs::path(model_dir) / experiment::kCheckpointFile).string();
  m.j["dataset"] = dataset.string();
  m.j["index"] = index;
  m.j["seed"] = decode.seed;

  std::ostringstream rep;
  const std::string text_out = text::join(text::decode(fr.tokens, bundle.vocab));
  rep << "record\t" << rec.id << '\n';
  rep << (mode == Mode::kImageGenReport ? "generated\t" : "input\t") << text_out << '\n';
  rep << "reference\t" << rec.report << '\n';
  const auto names = experiment::class_names(rec.labels.size());
  rep << "class\tprobability\tlabel\n";
  const Tensor& probs = fr.probs.value();
  for (std::size_t c = 0; c < names.size(); ++c) rep << names[c] << '\t' << fmt(probs[c]) << '\t' << rec.labels[c] << '\n';
  write_text(out / "report.txt", rep.str());
  m.artifact("report.txt", "report");

  std::ostringstream tr;
  write_trace(tr, trace);
  write_text(out / "trace.txt", tr.str());
  m.artifact("trace.txt", "attention-trace");
  m.j["metrics"]["tokens"] = fr.tokens.length();
  m.write();
  std::cout << text_out << '\n';
  return 0;
}

// --- gradcheck --------------------------------------------------------------------------

int cmd_gradcheck(const fs::path& out, const std::string& corrupt_op, const std::vector<std::string>& modes,
                  double tolerance, std::uint64_t seed) {
  GradcheckOptions opt;
  opt.tolerance = tolerance;
  opt.seed = seed;
  if (!modes.empty()) {
    opt.modes.clear();
    for (const auto& name : modes) usage_check([&] { opt.modes.push_back(parse_mode(name)); });
  }
  if (!corrupt_op.empty()) ad::testing::corrupt_backward(corrupt_op);
  const auto start = std::chrono::steady_clock::now();
  const auto rows = check_model_gradients(opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ad::testing::corrupt_backward("");

  std::ostringstream table;
  write_gradcheck_table(table, rows);
  std::cout << table.str();
  const bool ok = std::all_of(rows.begin(), rows.end(), [](const GroupCheck& r) { return r.passed; });
  std::cout << (ok ? "all parameter groups pass" : "gradient check FAILED") << " (" << fmt(secs, "%.2f") << " s)\n";

  fs::create_directories(out);
  Manifest m("gradcheck", out);
  m.j["seed"] = seed;
  m.j["tolerance"] = tolerance;
  if (!corrupt_op.empty()) m.j["corrupt_op"] = corrupt_op;
  write_text(out / "gradcheck.tsv", table.str());
  m.artifact("gradcheck.tsv", "gradcheck");
  m.j["metrics"]["passed"] = ok;
  m.j["metrics"]["seconds"] = secs;
  m.write();
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TieNet: joint chest X-ray style classification and report generation on synthetic data"};
  app.require_subcommand(1);

  Common gen_common, train_common, eval_common, generate_common, gc_common;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset (train/val/test)");
  gen_common.attach(gen);
  bool probe = false;
  gen->add_flag("--probe", probe, "also run the raw-pixel logistic probe and write probe.tsv");

  auto* tr = app.add_subcommand("train", "train a model in one mode");
  train_common.attach(tr);
  std::string train_data;
  tr->add_option("--data", train_data, "dataset directory from gen")->required();

  auto* ev = app.add_subcommand("eval", "per-class AUC summary and ROC curves for one or more models");
  eval_common.attach(ev);
  std::vector<std::string> eval_models;
  std::string eval_data, eval_split = "test";
  bool oracle = false, eval_sample = false;
  double eval_temperature = 1.0;
  ev->add_option("--model", eval_models, "trained model directory (repeatable)")->required();
  ev->add_option("--data", eval_data, "dataset directory from gen")->required();
  ev->add_option("--split", eval_split, "split to evaluate (train, val, test)");
  ev->add_flag("--sample", eval_sample, "sample generated reports instead of greedy decoding");
  ev->add_option("--temperature", eval_temperature, "sampling temperature");
  ev->add_flag("--oracle-scores", oracle, "score every class with its true label (pipeline check)")
      ->group("");

  auto* ge = app.add_subcommand("generate", "report and attention trace for one record");
  generate_common.attach(ge);
  std::string gen_model, gen_dataset;
  std::size_t gen_index = 0;
  bool gen_sample = false;
  double gen_temperature = 1.0;
  ge->add_option("--model", gen_model, "trained model directory")->required();
  ge->add_option("--dataset", gen_dataset, "dataset file (e.g. data/test.tsv)")->required();
  ge->add_option("--index", gen_index, "record index in the dataset file");
  ge->add_flag("--sample", gen_sample, "sample instead of greedy decoding");
  ge->add_option("--temperature", gen_temperature, "sampling temperature");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every parameter group (tiny model)");
  gc_common.attach(gc);
  std::string corrupt;
  std::vector<std::string> gc_modes;
  double tolerance = 1e-4;
  gc->add_option("--corrupt-op", corrupt, "scale the backward rule of this op by 1.5 (negative control)");
  gc->add_option("--modes", gc_modes, "modes to check (default all)");
  gc->add_option("--tolerance", tolerance, "maximum relative error per group");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  auto decode_options = [](bool sample, double temperature, std::uint64_t seed) {
    DecodeOptions d;
    d.sample = sample;
    d.temperature = temperature;
    d.seed = seed;
    return d;
  };

  try {
    if (gen->parsed()) return cmd_gen(gen_common.resolve(gen), gen_common.out_dir(), probe);
    if (tr->parsed()) {
      const auto s = train_common.resolve(tr);
      return cmd_train(s, train_data, train_common.out_dir());
    }
    if (ev->parsed()) {
      const auto s = eval_common.resolve(ev);
      return cmd_eval(eval_models, eval_data, eval_split, eval_common.out_dir(),
                      decode_options(eval_sample, eval_temperature, s.seed), oracle);
    }
    if (ge->parsed()) {
      const auto s = generate_common.resolve(ge);
      return cmd_generate(gen_model, gen_dataset, gen_index, generate_common.out_dir(),
                          decode_options(gen_sample, gen_temperature, s.seed));
    }
    if (gc->parsed()) {
      const auto s = gc_common.resolve(gc);
      return cmd_gradcheck(gc_common.out_dir(), corrupt, gc_modes, tolerance, s.seed);
    }
  } catch (const config::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
