#pragma once

// Command layer: a flat key/value run configuration, the synthetic corpus
// generator and one function per pipeline verb. Every verb reads only files
// written by earlier verbs plus the configuration, and leaves a manifest
// next to its outputs.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "perturbscore/textmodel.hpp"

namespace pscore {

enum class ConfigType { kInt, kFloat, kString, kBool, kStringList };

struct ConfigKey {
  std::string name;
  ConfigType type;
  nlohmann::json default_value;  // null when the key has no default
  std::string help;
};

// Every recognised configuration key, in display order.
const std::vector<ConfigKey>& config_keys();
const char* config_type_name(ConfigType t);

// Defaults merged with `overrides`. Unknown keys, type errors, range errors
// and missing paths are collected and reported together in one exception.
class RunConfig {
 public:
  static RunConfig from_json(const nlohmann::json& overrides, const std::string& verb);

  const nlohmann::json& values() const noexcept { return values_; }
  std::int64_t i(const std::string& key) const;
  std::size_t u(const std::string& key) const;
  double f(const std::string& key) const;
  const std::string& s(const std::string& key) const;
  bool b(const std::string& key) const;
  std::vector<std::string> list(const std::string& key) const;

  std::uint64_t seed() const { return static_cast<std::uint64_t>(i("seed")); }
  std::size_t workers() const { return u("workers"); }
  // Output-directory-relative default when the key is empty.
  std::string path_or(const std::string& key, const std::string& file) const;
  std::string out_path(const std::string& file) const;
  // SHA-256 over the canonical JSON dump.
  std::string hash() const;

 private:
  nlohmann::json values_;
};

struct SynthConfig {
  std::size_t texts = 2000;
  std::size_t vocab = 2000;
  std::size_t num_classes = 2;
  std::size_t min_len = 12;
  std::size_t max_len = 30;
  std::size_t strong_per_class = 40;
  std::size_t weak_per_class = 150;
  std::size_t strong_min = 2;
  std::size_t strong_max = 4;
  double weak_rate = 0.3;
  double weak_bias = 0.75;
  std::uint64_t seed = 1;
};

// Keyword corpus: strong keywords occur only in their own class, weak ones
// lean toward one class, the rest of the vocabulary is neutral filler. Each
// text carries at least strong_min strong keywords of its own class.
std::vector<LabeledText> synth_corpus(const SynthConfig& config);

std::vector<std::string> verbs();

// Runs one verb; returns a JSON summary (outputs, metrics, manifest path).
nlohmann::json run_command(const std::string& verb, const nlohmann::json& config);

}  // namespace pscore
