#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tienet/tensor.hpp"

namespace tienet::text {

// Reserved vocabulary slots, always the first four indices.
inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kOov = 1;
inline constexpr std::size_t kStart = 2;
inline constexpr std::size_t kEnd = 3;
inline constexpr std::size_t kNumReserved = 4;

inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kOovToken = "<unk>";
inline constexpr std::string_view kStartToken = "<start>";
inline constexpr std::string_view kEndToken = "<end>";

// Lowercases, splits on whitespace and splits off . , : ; ( ) as tokens.
std::vector<std::string> tokenize(std::string_view text);

std::string join(const std::vector<std::string>& tokens);

class Vocabulary {
 public:
  Vocabulary();

  // Keeps tokens seen at least min_count times, ordered by descending count
  // then ascending string.
  static Vocabulary build(const std::vector<std::vector<std::string>>& corpus,
                          std::size_t min_count = 2);

  std::size_t size() const { return tokens_.size(); }
  // kOov for unknown tokens.
  std::size_t index_of(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(std::size_t index) const { return tokens_.at(index); }
  std::size_t count(std::size_t index) const { return counts_.at(index); }

  void write(std::ostream& out) const;
  static Vocabulary read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.counts_ == b.counts_;
  }

 private:
  void add(std::string token, std::size_t count);

  std::vector<std::string> tokens_;
  std::vector<std::size_t> counts_;
  std::unordered_map<std::string, std::size_t> index_;
};

// START, content..., END. Padding is never stored here; callers batching
// sequences pad outside and strip before use.
struct TokenSequence {
  std::vector<std::size_t> ids;

  std::size_t length() const { return ids.size(); }
  // Throws if an id is out of range or START/END are misplaced.
  void validate(std::size_t vocab_size) const;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

TokenSequence encode(const std::vector<std::string>& tokens, const Vocabulary& vocab);
// Drops START/END/PAD; OOV renders as kOovToken.
std::vector<std::string> decode(const TokenSequence& seq, const Vocabulary& vocab);

// Removes PAD entries.
TokenSequence strip_padding(const TokenSequence& seq);

// V x d_w table drawn from uniform(-0.05, 0.05).
Tensor init_embedding_table(std::size_t vocab_size, std::size_t dim, std::mt19937_64& rng);

}  // namespace tienet::text
