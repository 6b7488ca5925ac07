#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "perturbscore/textmodel.hpp"

namespace pscore {

enum class PerturbMethod { kRandom, kGreedy };

const char* method_name(PerturbMethod m);
PerturbMethod parse_method(std::string_view name);

struct Edit {
  std::size_t position = 0;
  TokenId original = 0;
  TokenId replacement = 0;
  friend bool operator==(const Edit&, const Edit&) = default;
};

// A substitution-only edit set on one parent text. Edits are kept sorted by
// position; constructing through make_perturbation enforces the invariants.
struct Perturbation {
  std::vector<Edit> edits;
  PerturbMethod method = PerturbMethod::kRandom;
  std::uint64_t parent_hash = 0;

  std::size_t size() const noexcept { return edits.size(); }
  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

Perturbation make_perturbation(const TokenSequence& parent, std::vector<Edit> edits, PerturbMethod method);
// Throws unless `p` is a well-formed perturbation of `parent`.
void check_perturbation(const TokenSequence& parent, const Perturbation& p);

TokenSequence apply(const TokenSequence& parent, const Perturbation& p);
TokenSequence revert(const TokenSequence& perturbed, const Perturbation& p);

struct SynonymCandidate {
  TokenId id = 0;
  double score = 0.0;
};

class SynonymTable {
 public:
  SynonymTable() = default;
  SynonymTable(std::size_t k, std::vector<std::vector<SynonymCandidate>> rows)
      : k_(k), rows_(std::move(rows)) {}

  std::size_t k() const noexcept { return k_; }
  std::size_t vocab_size() const noexcept { return rows_.size(); }
  const std::vector<SynonymCandidate>& candidates(TokenId id) const;

 private:
  std::size_t k_ = 0;
  std::vector<std::vector<SynonymCandidate>> rows_;
};

// k nearest non-reserved neighbours of every non-reserved row by cosine.
SynonymTable build_synonym_table(const Tensor& embedding, std::size_t k);
SynonymTable build_synonym_table(const ClassifierModel& model, std::size_t k);

using Rng = std::mt19937_64;

Perturbation random_perturb(const TokenSequence& s, std::size_t n_edits, std::size_t vocab_size, Rng& rng);

// Drop in true-class probability when each position is deleted.
std::vector<double> deletion_importance(ClassifierSession& session, const TokenSequence& s);

// Importance-ranked greedy substitution; returns the perturbation after each
// edit, so edit counts run 1..min(max_edits, eligible positions).
std::vector<Perturbation> greedy_perturbs(const TokenSequence& s, ClassifierSession& session,
                                          const SynonymTable& synonyms, std::size_t max_edits);

std::size_t edit_distance(const TokenSequence& s, const Perturbation& p);

// Cosine of mean-pooled classifier embeddings of S and S+P(S).
double similarity_proxy(const ClassifierModel& model, const TokenSequence& s, const Perturbation& p);

}  // namespace pscore
