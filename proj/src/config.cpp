#include "tienet/config.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>

namespace tienet::config {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw std::invalid_argument("expected a nonnegative integer, got '" + v + "'");
  }
  errno = 0;
  const unsigned long long x = std::strtoull(v.c_str(), nullptr, 10);
  if (errno == ERANGE) throw std::invalid_argument("integer out of range: '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& v) {
  char* end = nullptr;
  errno = 0;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE) {
    throw std::invalid_argument("expected a number, got '" + v + "'");
  }
  return x;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_sizes(const std::string& v) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(to_size(trim(v.substr(start, comma == std::string::npos ? std::string::npos : comma - start))));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}
std::string fmt(std::size_t x) { return std::to_string(x); }
std::string fmt(bool x) { return x ? "true" : "false"; }

#define SIZE_KEY(NAME, HELP, MEMBER)                                                     \
  Key {                                                                                  \
    NAME, HELP, [](Settings& s, const std::string& v) { s.MEMBER = to_size(v); },        \
        [](const Settings& s) { return fmt(static_cast<std::size_t>(s.MEMBER)); }        \
  }
#define REAL_KEY(NAME, HELP, MEMBER)                                                     \
  Key {                                                                                  \
    NAME, HELP, [](Settings& s, const std::string& v) { s.MEMBER = to_double(v); },      \
        [](const Settings& s) { return fmt(s.MEMBER); }                                  \
  }
#define BOOL_KEY(NAME, HELP, MEMBER)                                                     \
  Key {                                                                                  \
    NAME, HELP, [](Settings& s, const std::string& v) { s.MEMBER = to_bool(v); },        \
        [](const Settings& s) { return fmt(static_cast<bool>(s.MEMBER)); }               \
  }

std::vector<Key> make_keys() {
  return {
      SIZE_KEY("seed", "data seed for gen; model and training seed for train", seed),
      SIZE_KEY("min_count", "minimum training-corpus count for a vocabulary word", min_count),

      SIZE_KEY("num_classes", "label count, the last one being 'no finding'", data.num_classes),
      SIZE_KEY("train_size", "generated training records", data.train_size),
      SIZE_KEY("val_size", "generated validation records", data.val_size),
      SIZE_KEY("test_size", "generated test records", data.test_size),
      SIZE_KEY("image_size", "image side in pixels", data.image_size),
      REAL_KEY("noise", "standard deviation of the pixel noise", data.noise),
      REAL_KEY("intensity", "motif pixel value", data.intensity),
      REAL_KEY("negation_prob", "chance of a negation phrase per negative class", data.negation_prob),
      REAL_KEY("prior_scale", "multiplier on the built-in label priors", data.prior_scale),
      BOOL_KEY("shuffle_phrases", "shuffle report phrases", data.shuffle_phrases),

      Key{"mode", "r, ir, igr or i-baseline",
          [](Settings& s, const std::string& v) { s.model.mode = parse_mode(v); },
          [](const Settings& s) { return std::string(mode_name(s.model.mode)); }},
      Key{"conv_channels", "backbone block widths, comma separated",
          [](Settings& s, const std::string& v) { s.model.conv_channels = to_sizes(v); },
          [](const Settings& s) {
            std::string out;
            for (std::size_t i = 0; i < s.model.conv_channels.size(); ++i)
              out += (i ? "," : "") + std::to_string(s.model.conv_channels[i]);
            return out;
          }},
      SIZE_KEY("channels", "transition layer channels C", model.channels),
      SIZE_KEY("hidden", "LSTM state size d_h", model.hidden),
      SIZE_KEY("embed", "word embedding size", model.embed),
      SIZE_KEY("att_hidden", "AETE hidden size s", model.att_hidden),
      SIZE_KEY("att_rows", "AETE attention rows r", model.att_rows),
      SIZE_KEY("spatial_hidden", "spatial attention hidden size", model.spatial_hidden),
      SIZE_KEY("max_decode_len", "generated tokens before END is forced", model.max_decode_len),
      REAL_KEY("alpha", "weight of L_C in the joint loss", model.alpha),
      REAL_KEY("penal_coeff", "weight of the AETE redundancy penalty", model.penal_coeff),
      BOOL_KEY("global_context", "feed mean-pooled image features to the LSTM", model.global_context),
      SIZE_KEY("classifier_hidden", "hidden units before the classifier, 0 for none", model.classifier_hidden),

      REAL_KEY("lr", "Adam learning rate", train.lr),
      SIZE_KEY("batch_size", "samples per micro-batch", train.batch_size),
      SIZE_KEY("accumulation", "micro-batches per optimiser step", train.accumulation),
      REAL_KEY("dropout", "dropout on the classifier input", train.dropout),
      REAL_KEY("l2", "L2 coefficient", train.l2),
      REAL_KEY("report_dropout", "token-to-OOV rate on input reports in mode ir", train.report_dropout),
      SIZE_KEY("epochs", "training epochs", train.epochs),
      Key{"annotation_only", "true, false or auto (true for r and ir)",
          [](Settings& s, const std::string& v) {
            if (v == "auto") {
              s.train.annotation_only.reset();
            } else {
              s.train.annotation_only = to_bool(v);
            }
          },
          [](const Settings& s) { return s.train.annotation_only ? fmt(*s.train.annotation_only) : "auto"; }},
      Key{"select_by", "validation criterion for the kept checkpoint: auc or loss",
          [](Settings& s, const std::string& v) {
            if (v == "auc") {
              s.train.select_by = train::Selection::kAuc;
            } else if (v == "loss") {
              s.train.select_by = train::Selection::kLoss;
            } else {
              throw std::invalid_argument("expected auc or loss, got '" + v + "'");
            }
          },
          [](const Settings& s) { return std::string(s.train.select_by == train::Selection::kAuc ? "auc" : "loss"); }},
      SIZE_KEY("threads", "worker threads for per-sample passes", train.threads),
  };
}

#undef SIZE_KEY
#undef REAL_KEY
#undef BOOL_KEY

}  // namespace

const std::vector<Key>& keys() {
  static const std::vector<Key> all = make_keys();
  return all;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : keys())
    if (k.name == name) return &k;
  return nullptr;
}

Entries parse(std::istream& in, const std::string& source) {
  Entries out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), trim(line.substr(eq + 1)));
  }
  return out;
}

Entries load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string());
}

void apply(Settings& settings, const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError("unknown config key '" + key + "'");
  try {
    k->set(settings, value);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError("config key '" + key + "': " + e.what());
  }
}

void apply(Settings& settings, const Entries& entries) {
  for (const auto& [k, v] : entries) apply(settings, k, v);
}

void write(std::ostream& out, const Settings& settings) {
  for (const auto& k : keys()) out << k.name << " = " << k.get(settings) << '\n';
}

}  // namespace tienet::config
