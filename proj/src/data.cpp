#include "tienet/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "tienet/metrics.hpp"
#include "tienet/random.hpp"

namespace tienet::data {

// --- file format ----------------------------------------------------------------

namespace {

std::runtime_error line_error(std::size_t lineno, const std::string& what) {
  return std::runtime_error("dataset line " + std::to_string(lineno) + ": " + what);
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\t' || c == '\n') {
      out += c == '\t' ? "\\t" : "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out + "\"";
}

std::string unquote(const std::string& s, std::size_t lineno) {
  if (s.size() < 2 || s.front() != '"' || s.back() != '"') throw line_error(lineno, "report must be a quoted string");
  std::string out;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    char c = s[i];
    if (c == '\\') {
      if (i + 2 >= s.size()) throw line_error(lineno, "dangling escape in report");
      const char e = s[++i];
      if (e == 't') out.push_back('\t');
      else if (e == 'n') out.push_back('\n');
      else if (e == '"' || e == '\\') out.push_back(e);
      else throw line_error(lineno, std::string("unknown escape \\") + e);
    } else if (c == '"') {
      throw line_error(lineno, "unescaped quote in report");
    } else {
      out.push_back(c);
    }
  }
  return out;
}

constexpr char kHex[] = "0123456789abcdef";

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

std::size_t parse_size(const std::string& s, std::size_t lineno, const char* what) {
  if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    throw line_error(lineno, std::string("bad ") + what + " '" + s + "'");
  }
  return std::stoull(s);
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& records) {
  for (const auto& r : records) {
    const Tensor& img = r.image;
    if (img.rank() != 3) throw std::invalid_argument("dataset: image must be 3-D");
    out << r.id << '\t' << r.split << '\t' << img.dim(0) << 'x' << img.dim(1) << 'x' << img.dim(2) << ':';
    std::string hex(img.size() * 8, '0');
    for (std::size_t i = 0; i < img.size(); ++i) {
      const float f = static_cast<float>(img[i]);
      if (static_cast<double>(f) != img[i]) {
        throw std::invalid_argument("dataset: pixel not representable as float32 in record " + std::to_string(r.id));
      }
      const auto bits = std::bit_cast<std::uint32_t>(f);
      for (int k = 0; k < 8; ++k) hex[i * 8 + k] = kHex[(bits >> (28 - 4 * k)) & 0xF];
    }
    out << hex << '\t' << quote(r.report) << '\t';
    for (std::size_t m = 0; m < r.labels.size(); ++m) out << (m ? "," : "") << r.labels[m];
    out << '\n';
  }
}

Dataset read_dataset(std::istream& in) {
  Dataset out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 5) {
      throw line_error(lineno, "expected 5 tab-separated fields, found " + std::to_string(fields.size()));
    }
    Record r;
    r.id = parse_size(fields[0], lineno, "record id");
    r.split = fields[1];
    if (r.split.empty()) throw line_error(lineno, "empty split tag");

    const std::string& img = fields[2];
    const auto colon = img.find(':');
    if (colon == std::string::npos) throw line_error(lineno, "image field lacks a shape prefix");
    Shape shape;
    {
      std::string dims = img.substr(0, colon);
      std::size_t start = 0;
      while (true) {
        const auto x = dims.find('x', start);
        shape.push_back(parse_size(dims.substr(start, x == std::string::npos ? std::string::npos : x - start),
                                   lineno, "image extent"));
        if (x == std::string::npos) break;
        start = x + 1;
      }
    }
    if (shape.size() != 3 || shape_numel(shape) == 0) throw line_error(lineno, "image shape must be HxWxC");
    const std::size_t n = shape_numel(shape);
    if (img.size() - colon - 1 != n * 8) {
      throw line_error(lineno, "image has " + std::to_string(img.size() - colon - 1) + " hex digits, expected " +
                                   std::to_string(n * 8));
    }
    std::vector<double> pixels(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 8; ++k) {
        const int v = hex_value(img[colon + 1 + i * 8 + k]);
        if (v < 0) throw line_error(lineno, "bad hex digit in image");
        bits = (bits << 4) | static_cast<std::uint32_t>(v);
      }
      pixels[i] = static_cast<double>(std::bit_cast<float>(bits));
      if (!std::isfinite(pixels[i])) throw line_error(lineno, "non-finite pixel");
    }
    r.image = Tensor(shape, std::move(pixels));
    r.report = unquote(fields[3], lineno);

    const std::string& labels = fields[4];
    std::size_t start = 0;
    while (true) {
      const auto comma = labels.find(',', start);
      const std::string tok = labels.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (tok != "0" && tok != "1") throw line_error(lineno, "labels must be 0 or 1, got '" + tok + "'");
      r.labels.push_back(tok == "1");
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (!out.empty() && out.front().labels.size() != r.labels.size()) {
      throw line_error(lineno, "label count differs from earlier records");
    }
    out.push_back(std::move(r));
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const Dataset& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("dataset: cannot open " + path.string());
  write_dataset(out, records);
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("dataset: cannot open " + path.string());
  return read_dataset(in);
}

ClassCounts class_counts(const Dataset& records, std::optional<std::size_t> no_finding_class) {
  ClassCounts c;
  c.total = records.size();
  if (!records.empty()) c.positives.assign(records.front().labels.size(), 0);
  for (const auto& r : records) {
    bool finding = false;
    for (std::size_t m = 0; m < r.labels.size(); ++m) {
      if (!r.labels[m]) continue;
      ++c.positives.at(m);
      if (!no_finding_class || m != *no_finding_class) finding = true;
    }
    ++(finding ? c.with_finding : c.without_finding);
  }
  return c;
}

// --- synthetic generator ----------------------------------------------------------

const std::vector<ClassInfo>& default_classes() {
  static const std::vector<ClassInfo> classes = {
      {"atelectasis", "linear opacity and volume loss", 3, 0,
       {"#####", "#####", "#####", "#####", "#####"}},
      {"cardiomegaly", "an enlarged cardiac silhouette", 2, 2,
       {"..#..", "..#..", "#####", "..#..", "..#.."}},
      {"effusion", "blunting of the costophrenic angle", 3, 3,
       {"#...#", ".#.#.", "..#..", ".#.#.", "#...#"}},
      {"infiltration", "patchy interstitial opacities", 1, 0,
       {"#####", "#...#", "#...#", "#...#", "#####"}},
      {"mass", "a large rounded soft tissue density", 1, 3,
       {".....", "#####", "#####", "#####", "....."}},
      {"nodule", "a small well circumscribed opacity", 0, 1,
       {".###.", ".###.", ".###.", ".###.", ".###."}},
      {"pneumonia", "focal airspace disease", 2, 0,
       {"..#..", ".###.", "#####", ".###.", "..#.."}},
      {"pneumothorax", "a visible pleural line", 0, 3,
       {"##...", "###..", ".###.", "..###", "...##"}},
      {"consolidation", "dense opacification with air bronchograms", 2, 3,
       {"#####", "#####", "..#..", "..#..", "..#.."}},
      {"edema", "vascular congestion and septal lines", 1, 1,
       {"#....", "#....", "#....", "#....", "#####"}},
      {"emphysema", "hyperinflated lucent lungs", 0, 0,
       {"#.#.#", ".#.#.", "#.#.#", ".#.#.", "#.#.#"}},
      {"fibrosis", "reticular scarring", 0, 2,
       {".....", ".###.", ".###.", ".###.", "....."}},
      {"pleural thickening", "irregular pleural based thickening", 1, 2,
       {"#...#", "#...#", "#####", "#...#", "#...#"}},
      {"hernia", "a bowel loop above the diaphragm", 3, 2,
       {"#...#", "#...#", "#...#", "#...#", "#####"}},
      {"no finding", "", 0, 0, {}},
  };
  return classes;
}

namespace {

constexpr std::size_t kLayout = 4;  // motif cells per side
constexpr std::size_t kMotif = 5;

const char* kRowWords[kLayout] = {"apical", "upper", "middle", "lower"};
const char* kColWords[kLayout] = {"right lateral", "right medial", "left medial", "left lateral"};

std::string location(const ClassInfo& c) {
  return std::string(kColWords[c.col]) + " " + kRowWords[c.row];
}

}  // namespace

std::string positive_phrase(std::size_t cls, std::size_t variant) {
  const auto& c = default_classes().at(cls);
  if (c.shape.empty()) return "heart size is normal and the lungs are clear . no acute cardiopulmonary abnormality .";
  if (variant % 2 == 0) return "there is " + c.term + " in the " + location(c) + " zone with " + c.finding + " .";
  return location(c) + " " + c.finding + " consistent with " + c.term + " .";
}

std::string negation_phrase(std::size_t cls) { return "no " + default_classes().at(cls).term; }

std::vector<double> default_priors(std::size_t num_classes) {
  static const double base[] = {0.12, 0.08, 0.14, 0.16, 0.07, 0.07, 0.05, 0.08, 0.06, 0.05, 0.05, 0.04, 0.05, 0.03};
  std::vector<double> out;
  for (std::size_t m = 0; m + 1 < num_classes; ++m) out.push_back(base[m % std::size(base)]);
  out.push_back(0.0);  // no finding is derived
  return out;
}

void SyntheticSpec::validate() const {
  if (num_classes < 2 || num_classes > default_classes().size()) {
    throw std::invalid_argument("synthetic spec: num_classes must be in 2.." + std::to_string(default_classes().size()));
  }
  if (image_size < kLayout * kMotif || image_size % kLayout != 0) {
    throw std::invalid_argument("synthetic spec: image_size must be a multiple of 4 and at least 20");
  }
  if (!(noise >= 0.0)) throw std::invalid_argument("synthetic spec: noise must be nonnegative");
  if (!(negation_prob >= 0.0 && negation_prob <= 1.0)) {
    throw std::invalid_argument("synthetic spec: negation_prob must be in [0,1]");
  }
  if (!(prior_scale > 0.0)) throw std::invalid_argument("synthetic spec: prior_scale must be positive");
  if (train_size == 0 || val_size == 0 || test_size == 0) {
    throw std::invalid_argument("synthetic spec: split sizes must be positive");
  }
}

Tensor render_clean(const SyntheticSpec& spec, const std::vector<int>& labels) {
  const std::size_t S = spec.image_size;
  const std::size_t cell = S / kLayout;
  Tensor img({S, S, 1});
  for (std::size_t m = 0; m + 1 < spec.num_classes; ++m) {
    if (!labels.at(m)) continue;
    const auto& c = default_classes()[m];
    const std::size_t top = c.row * cell + cell / 2 - kMotif / 2;
    const std::size_t left = c.col * cell + cell / 2 - kMotif / 2;
    for (std::size_t y = 0; y < kMotif; ++y)
      for (std::size_t x = 0; x < kMotif; ++x)
        if (c.shape[y][x] == '#') img.at(top + y, left + x, 0) = static_cast<float>(spec.intensity);
  }
  return img;
}

namespace {

Record make_record(const SyntheticSpec& spec, const std::vector<double>& priors, std::size_t id,
                   const std::string& split) {
  std::mt19937_64 rng(derive_seed(spec.seed, id));
  Record r;
  r.id = id;
  r.split = split;
  const std::size_t nf = spec.no_finding_class();
  r.labels.assign(spec.num_classes, 0);
  bool any = false;
  for (std::size_t m = 0; m < nf; ++m) {
    r.labels[m] = bernoulli(rng, std::min(1.0, priors[m] * spec.prior_scale));
    any = any || r.labels[m];
  }
  r.labels[nf] = !any;

  r.image = render_clean(spec, r.labels);
  for (auto& v : r.image.data()) v = static_cast<float>(v + spec.noise * normal(rng));

  std::vector<std::string> phrases;
  for (std::size_t m = 0; m < spec.num_classes; ++m) {
    if (r.labels[m]) phrases.push_back(positive_phrase(m, uniform_index(rng, 2)));
  }
  std::string negations;
  for (std::size_t m = 0; m < nf; ++m) {
    if (!r.labels[m] && bernoulli(rng, spec.negation_prob)) negations += negation_phrase(m) + " ";
  }
  if (!negations.empty()) phrases.push_back(negations + ".");
  if (spec.shuffle_phrases) {
    for (std::size_t i = phrases.size(); i > 1; --i) std::swap(phrases[i - 1], phrases[uniform_index(rng, i)]);
  }
  for (std::size_t i = 0; i < phrases.size(); ++i) r.report += (i ? " " : "") + phrases[i];
  return r;
}

}  // namespace

SplitSet generate(const SyntheticSpec& spec) {
  spec.validate();
  const auto priors = default_priors(spec.num_classes);
  SplitSet out;
  std::size_t id = 0;
  for (std::size_t i = 0; i < spec.train_size; ++i) out.train.push_back(make_record(spec, priors, id++, "train"));
  for (std::size_t i = 0; i < spec.val_size; ++i) out.val.push_back(make_record(spec, priors, id++, "val"));
  for (std::size_t i = 0; i < spec.test_size; ++i) out.test.push_back(make_record(spec, priors, id++, "test"));
  return out;
}

std::vector<std::optional<double>> pixel_probe_auc(const Dataset& train, const Dataset& test, std::size_t num_classes,
                                                   std::size_t epochs) {
  if (train.empty() || test.empty()) throw std::invalid_argument("pixel probe: empty split");
  const std::size_t n = train.front().image.size();
  std::vector<std::vector<double>> w(num_classes, std::vector<double>(n + 1, 0.0));
  const double lr = 0.05, l2 = 1e-4;
  for (std::size_t e = 0; e < epochs; ++e) {
    for (const auto& r : train) {
      const auto px = r.image.data();
      for (std::size_t m = 0; m < num_classes; ++m) {
        double z = w[m][n];
        for (std::size_t i = 0; i < n; ++i) z += w[m][i] * px[i];
        const double p = 1.0 / (1.0 + std::exp(-z));
        const double g = p - r.labels[m];
        for (std::size_t i = 0; i < n; ++i) w[m][i] -= lr * (g * px[i] + l2 * w[m][i]);
        w[m][n] -= lr * g;
      }
    }
  }
  std::vector<std::optional<double>> out;
  for (std::size_t m = 0; m < num_classes; ++m) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& r : test) {
      double z = w[m][n];
      const auto px = r.image.data();
      for (std::size_t i = 0; i < n; ++i) z += w[m][i] * px[i];
      scores.push_back(z);
      labels.push_back(r.labels[m]);
    }
    out.push_back(metrics::roc_auc(scores, labels));
  }
  return out;
}

}  // namespace tienet::data
