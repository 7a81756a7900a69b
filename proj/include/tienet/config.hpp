#pragma once

// Run settings shared by the command-line tools. Files hold one
// "key = value" per line; '#' starts a comment.

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tienet/data.hpp"
#include "tienet/model.hpp"
#include "tienet/training.hpp"

namespace tienet::config {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Settings {
  std::uint64_t seed = 1;     // data seed for gen, model and training seed for train
  std::size_t min_count = 2;  // vocabulary threshold
  data::SyntheticSpec data;
  ModelConfig model;
  train::TrainConfig train;
};

struct Key {
  std::string name;
  std::string help;
  std::function<void(Settings&, const std::string&)> set;
  std::function<std::string(const Settings&)> get;
};

const std::vector<Key>& keys();
const Key* find_key(const std::string& name);

// Parsed file contents in file order; duplicate keys keep the last value.
using Entries = std::vector<std::pair<std::string, std::string>>;

// Throws ConfigError naming the source and line.
Entries parse(std::istream& in, const std::string& source = "config");
Entries load(const std::filesystem::path& path);

// Throws ConfigError naming an unknown key or a bad value.
void apply(Settings& settings, const Entries& entries);
void apply(Settings& settings, const std::string& key, const std::string& value);

// Every key with its resolved value; parse(write(s)) reproduces s.
void write(std::ostream& out, const Settings& settings);

}  // namespace tienet::config
