#include "tienet/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "tienet/random.hpp"
#include "tienet/training.hpp"

namespace tienet {

ModelConfig tiny_config(Mode mode) {
  ModelConfig c;
  c.image_size = 16;
  c.conv_channels = {2, 2, 2};
  c.channels = 3;
  c.hidden = 4;
  c.embed = 3;
  c.att_hidden = 5;
  c.att_rows = 2;
  c.spatial_hidden = 3;
  c.num_classes = 3;
  c.vocab_size = 7;
  c.classifier_hidden = 3;
  c.max_decode_len = 4;
  c.mode = mode;
  return c;
}

namespace {

std::string group_of(const std::string& name) {
  // "attention.spatial.w_h" -> "attention.spatial", "lstm.weight" -> "lstm"
  const auto first = name.find('.');
  if (first == std::string::npos) return name;
  const std::string head = name.substr(0, first);
  if (head == "backbone" || head == "attention" || head == "init") {
    const auto second = name.find('.', first + 1);
    return name.substr(0, second);
  }
  return head;
}

train::Example tiny_example(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  train::Example ex;
  ex.id = 3;
  ex.image = Tensor({c.image_size, c.image_size, c.image_channels});
  for (auto& v : ex.image.data()) v = normal(rng);
  ex.tokens.ids = {text::kStart, 4, 6, 5, text::kEnd};
  ex.labels = {1, 0, 1};
  return ex;
}

}  // namespace

std::vector<GroupCheck> check_model_gradients(const GradcheckOptions& opt) {
  std::vector<GroupCheck> rows;
  train::ClassWeights weights;
  weights.beta_p = 0.6;
  weights.beta_n = 0.4;
  weights.lambda = {0.7, 0.9, 0.4};

  for (Mode mode : opt.modes) {
    TieNetModel model(tiny_config(mode), opt.seed);
    // Zero biases put ReLUs fed by dead units exactly on their kink, where
    // central differences disagree with any one-sided derivative. Check at a
    // generic point instead.
    {
      std::mt19937_64 rng(derive_seed(opt.seed, 0x61c));
      for (auto& p : model.mutable_parameters())
        for (auto& v : p.value.data()) v += uniform(rng, -opt.jitter, opt.jitter);
    }
    const train::Example ex = tiny_example(model.config(), opt.seed + 1);
    train::TrainConfig tc;
    tc.seed = opt.seed;
    tc.dropout = 0.5;
    tc.report_dropout = 0.3;
    tc.annotation_only = mode == Mode::kReport || mode == Mode::kImageReport;

    const auto analytic = train::sample_gradients(model, ex, weights, tc, 1).grads;
    auto& params = model.mutable_parameters();

    struct Acc {
      std::size_t n = 0;
      double max_err = 0.0, diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    };
    std::map<std::string, Acc> groups;
    std::vector<std::string> order;
    for (std::size_t k = 0; k < params.size(); ++k) {
      const std::string g = group_of(params[k].name);
      if (!groups.count(g)) order.push_back(g);
      Acc& acc = groups[g];
      for (std::size_t i = 0; i < params[k].value.size(); ++i) {
        double& x = params[k].value[i];
        const double saved = x;
        x = saved + opt.h;
        const double up = train::sample_loss(model, ex, weights, tc, 1);
        x = saved - opt.h;
        const double down = train::sample_loss(model, ex, weights, tc, 1);
        x = saved;
        const double numeric = (up - down) / (2.0 * opt.h);
        const double a = analytic[k][i];
        acc.max_err = std::max(acc.max_err, ad::relative_error(a, numeric));
        acc.diff2 += (a - numeric) * (a - numeric);
        acc.a2 += a * a;
        acc.n2 += numeric * numeric;
        ++acc.n;
      }
    }
    for (const auto& g : order) {
      const Acc& acc = groups[g];
      GroupCheck row;
      row.mode = mode;
      row.group = g;
      row.coordinates = acc.n;
      row.max_error = acc.max_err;
      row.norm_error = std::sqrt(acc.diff2) / std::max(1e-8, std::sqrt(acc.a2) + std::sqrt(acc.n2));
      row.passed = row.norm_error <= opt.tolerance && std::isfinite(row.max_error);
      rows.push_back(row);
    }
  }
  return rows;
}

void write_gradcheck_table(std::ostream& out, const std::vector<GroupCheck>& rows) {
  out << "mode\tgroup\tcoords\tnorm_rel_err\tmax_coord_rel_err\tresult\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s\t%s\t%zu\t%.3e\t%.3e\t%s\n", std::string(mode_name(r.mode)).c_str(),
                  r.group.c_str(), r.coordinates, r.norm_error, r.max_error, r.passed ? "PASS" : "FAIL");
    out << buf;
  }
}

}  // namespace tienet
