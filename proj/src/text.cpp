#include "tienet/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "tienet/random.hpp"

namespace tienet::text {

namespace {
bool is_split_punct(char c) {
  return c == '.' || c == ',' || c == ':' || c == ';' || c == '(' || c == ')';
}
}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (is_split_punct(ch)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary() {
  add(std::string(kPadToken), 0);
  add(std::string(kOovToken), 0);
  add(std::string(kStartToken), 0);
  add(std::string(kEndToken), 0);
}

void Vocabulary::add(std::string token, std::size_t count) {
  if (index_.contains(token)) throw std::invalid_argument("vocabulary: duplicate token '" + token + "'");
  index_.emplace(token, tokens_.size());
  tokens_.push_back(std::move(token));
  counts_.push_back(count);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus, std::size_t min_count) {
  if (min_count == 0) throw std::invalid_argument("vocabulary: min_count must be positive");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : corpus)
    for (const auto& tok : doc) ++counts[tok];

  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n < min_count) continue;
    if (tok == kPadToken || tok == kOovToken || tok == kStartToken || tok == kEndToken) continue;
    kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  for (auto& [tok, n] : kept) v.add(tok, n);
  return v;
}

std::size_t Vocabulary::index_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kOov : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.contains(std::string(token)); }

void Vocabulary::write(std::ostream& out) const {
  for (std::size_t i = 0; i < kNumReserved; ++i) out << tokens_[i] << '\n';
  for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << counts_[i] << '\n';
}

Vocabulary Vocabulary::read(std::istream& in) {
  Vocabulary v;
  std::string line;
  for (std::size_t i = 0; i < kNumReserved; ++i) {
    if (!std::getline(in, line) || line != v.tokens_[i]) {
      throw std::runtime_error("vocabulary: line " + std::to_string(i + 1) + ": expected reserved token " +
                               v.tokens_[i]);
    }
  }
  std::size_t lineno = kNumReserved;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw std::runtime_error("vocabulary: line " + std::to_string(lineno) + ": expected token<TAB>count");
    }
    std::size_t count = 0;
    try {
      count = std::stoul(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw std::runtime_error("vocabulary: line " + std::to_string(lineno) + ": bad count");
    }
    v.add(line.substr(0, tab), count);
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("vocabulary: cannot open " + path.string());
  write(out);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("vocabulary: cannot open " + path.string());
  return read(in);
}

void TokenSequence::validate(std::size_t vocab_size) const {
  if (ids.size() < 2 || ids.front() != kStart || ids.back() != kEnd) {
    throw std::invalid_argument("token sequence must start with START and end with END");
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab_size) throw std::invalid_argument("token index out of vocabulary range");
    if (i > 0 && i + 1 < ids.size() && (ids[i] == kStart || ids[i] == kEnd)) {
      throw std::invalid_argument("START/END inside token sequence");
    }
  }
}

TokenSequence encode(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  TokenSequence seq;
  seq.ids.reserve(tokens.size() + 2);
  seq.ids.push_back(kStart);
  for (const auto& t : tokens) {
    const std::size_t id = vocab.index_of(t);
    // Reserved spellings inside text are ordinary unknown words.
    seq.ids.push_back(id < kNumReserved ? kOov : id);
  }
  seq.ids.push_back(kEnd);
  return seq;
}

std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (std::size_t id : seq.ids) {
    if (id == kStart || id == kEnd || id == kPad) continue;
    out.push_back(id == kOov ? std::string(kOovToken) : vocab.token(id));
  }
  return out;
}

TokenSequence strip_padding(const TokenSequence& seq) {
  TokenSequence out;
  for (std::size_t id : seq.ids)
    if (id != kPad) out.ids.push_back(id);
  return out;
}

Tensor init_embedding_table(std::size_t vocab_size, std::size_t dim, std::mt19937_64& rng) {
  Tensor t({vocab_size, dim});
  for (auto& v : t.data()) v = uniform(rng, -0.05, 0.05);
  return t;
}

}  // namespace tienet::text
