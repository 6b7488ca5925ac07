#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "perturbscore/epsilon_search.hpp"
#include "perturbscore/perturbgen.hpp"
#include "perturbscore/textmodel.hpp"

namespace pscore {

// One scorer training/evaluation record built from an accepted tuple.
struct ScorerExample {
  std::vector<TokenId> input;  // marked-up sequence
  double target = 0.0;         // epsilon
  std::uint64_t text_hash = 0;
  PerturbMethod method = PerturbMethod::kRandom;
  std::size_t edit_distance = 0;
  double similarity = 1.0;
};

struct ScorerDataset {
  std::uint64_t vocab_hash = 0;
  std::string tag;  // provenance label, e.g. "random/classifier-<id>"
  std::vector<ScorerExample> examples;
  std::size_t rejected = 0;  // tuples dropped because truncation would cut an edit
};

// Writes each edited token as `orig [ repl ]`; other tokens pass through.
// Throws if truncation to max_len would drop part of an edit.
std::vector<TokenId> encode_scorer_input(const TokenSequence& s, const Perturbation& p, std::size_t max_len);

struct DecodedInput {
  std::vector<TokenId> tokens;
  std::vector<Edit> edits;
};
DecodedInput decode_scorer_input(std::span<const TokenId> ids);

nlohmann::json perturbation_to_json(const Perturbation& p, const Vocabulary& vocab);
Perturbation perturbation_from_json(const nlohmann::json& j, const Vocabulary& vocab);
nlohmann::json tuple_to_json(const DataTuple& t, const Vocabulary& vocab);
DataTuple tuple_from_json(const nlohmann::json& j, const Vocabulary& vocab);

// One JSON value per line. Blank lines are skipped; a malformed line raises
// a parse error naming its 1-based line number.
std::vector<nlohmann::json> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, std::span<const nlohmann::json> records);

std::vector<Perturbation> read_perturbations(const std::string& path, const Vocabulary& vocab);
void write_perturbations(const std::string& path, std::span<const Perturbation> ps, const Vocabulary& vocab);
std::vector<DataTuple> read_tuples(const std::string& path, const Vocabulary& vocab);
void write_tuples(const std::string& path, std::span<const DataTuple> tuples, const Vocabulary& vocab);

// Drops repeated (text hash, edits) pairs, keeping the first occurrence.
std::vector<DataTuple> dedupe_tuples(std::span<const DataTuple> tuples);

struct TupleSplit {
  std::vector<DataTuple> train;
  std::vector<DataTuple> test;
};

// Split by parent text: round(ratio * #texts) texts go to train, the rest
// to test. Independent of input order.
TupleSplit split_dataset(std::span<const DataTuple> tuples, double ratio, std::uint64_t seed);

// Accepted tuples only; texts are looked up by hash.
ScorerDataset build_scorer_dataset(std::span<const DataTuple> tuples,
                                   const std::unordered_map<std::uint64_t, TokenSequence>& texts,
                                   const Vocabulary& vocab, std::size_t max_len, std::string tag);

void write_json_file(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::string& path);

}  // namespace pscore
