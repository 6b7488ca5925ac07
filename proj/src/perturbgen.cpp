#include "perturbscore/perturbgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "perturbscore/error.hpp"

namespace pscore {

const char* method_name(PerturbMethod m) {
  return m == PerturbMethod::kRandom ? "random" : "greedy";
}

PerturbMethod parse_method(std::string_view name) {
  if (name == "random") return PerturbMethod::kRandom;
  if (name == "greedy") return PerturbMethod::kGreedy;
  throw Error(ErrorCode::kParse, "unknown perturbation method '" + std::string(name) + "'");
}

void check_perturbation(const TokenSequence& parent, const Perturbation& p) {
  if (p.parent_hash != parent.hash()) {
    throw Error(ErrorCode::kMismatch, "perturbation does not belong to this text (hash mismatch)");
  }
  if (p.edits.empty()) throw Error(ErrorCode::kInvalidArgument, "perturbation has no edits");
  for (std::size_t i = 0; i < p.edits.size(); ++i) {
    const Edit& e = p.edits[i];
    if (e.position >= parent.size()) throw Error(ErrorCode::kInvalidArgument, "edit position out of range");
    if (i > 0 && e.position <= p.edits[i - 1].position) {
      throw Error(ErrorCode::kInvalidArgument, "edit positions must be strictly increasing");
    }
    if (parent.tokens[e.position] != e.original) {
      throw Error(ErrorCode::kMismatch, "edit original token does not match the text");
    }
    if (e.replacement == e.original) throw Error(ErrorCode::kInvalidArgument, "edit replacement equals original");
  }
}

Perturbation make_perturbation(const TokenSequence& parent, std::vector<Edit> edits, PerturbMethod method) {
  std::sort(edits.begin(), edits.end(), [](const Edit& a, const Edit& b) { return a.position < b.position; });
  Perturbation p{std::move(edits), method, parent.hash()};
  check_perturbation(parent, p);
  return p;
}

TokenSequence apply(const TokenSequence& parent, const Perturbation& p) {
  check_perturbation(parent, p);
  TokenSequence out = parent;
  out.raw_text.clear();
  for (const Edit& e : p.edits) out.tokens[e.position] = e.replacement;
  return out;
}

TokenSequence revert(const TokenSequence& perturbed, const Perturbation& p) {
  TokenSequence out = perturbed;
  for (const Edit& e : p.edits) {
    if (e.position >= out.size() || out.tokens[e.position] != e.replacement) {
      throw Error(ErrorCode::kMismatch, "revert: text is not the perturbed form of this perturbation");
    }
    out.tokens[e.position] = e.original;
  }
  if (out.hash() != p.parent_hash) throw Error(ErrorCode::kMismatch, "revert: result does not match parent hash");
  return out;
}

// ----------------------------------------------------------------- synonyms

const std::vector<SynonymCandidate>& SynonymTable::candidates(TokenId id) const {
  if (id >= rows_.size()) throw Error(ErrorCode::kInvalidArgument, "synonym table: id out of range");
  return rows_[id];
}

SynonymTable build_synonym_table(const Tensor& embedding, std::size_t k) {
  const std::size_t v = embedding.rows(), d = embedding.cols();
  if (v < Vocabulary::kReservedCount + k + 1 || k == 0) {
    throw Error(ErrorCode::kInvalidArgument, "synonym table: vocabulary has fewer than k+1 usable tokens");
  }
  std::vector<double> norms(v);
  for (std::size_t i = 0; i < v; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += embedding.at(i, j) * embedding.at(i, j);
    norms[i] = std::sqrt(s);
  }
  std::vector<std::vector<SynonymCandidate>> rows(v);
  std::vector<SynonymCandidate> scored;
  for (std::size_t i = Vocabulary::kReservedCount; i < v; ++i) {
    scored.clear();
    for (std::size_t o = Vocabulary::kReservedCount; o < v; ++o) {
      if (o == i) continue;
      double dot = 0.0;
      for (std::size_t j = 0; j < d; ++j) dot += embedding.at(i, j) * embedding.at(o, j);
      const double denom = norms[i] * norms[o];
      scored.push_back({static_cast<TokenId>(o), denom > 0.0 ? dot / denom : 0.0});
    }
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end(),
                      [](const SynonymCandidate& a, const SynonymCandidate& b) {
                        return a.score != b.score ? a.score > b.score : a.id < b.id;
                      });
    rows[i].assign(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k));
  }
  return {k, std::move(rows)};
}

SynonymTable build_synonym_table(const ClassifierModel& model, std::size_t k) {
  return build_synonym_table(model.params.embedding, k);
}

// ------------------------------------------------------------ perturbations

Perturbation random_perturb(const TokenSequence& s, std::size_t n_edits, std::size_t vocab_size, Rng& rng) {
  if (n_edits == 0) throw Error(ErrorCode::kInvalidArgument, "random_perturb: n_edits must be >= 1");
  if (vocab_size < Vocabulary::kReservedCount + 2) {
    throw Error(ErrorCode::kInvalidArgument, "random_perturb: vocabulary too small");
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!Vocabulary::is_reserved(s.tokens[i])) eligible.push_back(i);
  if (n_edits > eligible.size()) {
    throw Error(ErrorCode::kInvalidArgument, "random_perturb: text too short for " + std::to_string(n_edits) + " edits");
  }
  // Partial Fisher-Yates: the first n_edits slots become a uniform sample.
  for (std::size_t i = 0; i < n_edits; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, eligible.size() - 1);
    std::swap(eligible[i], eligible[pick(rng)]);
  }
  std::uniform_int_distribution<TokenId> repl(Vocabulary::kReservedCount, static_cast<TokenId>(vocab_size - 2));
  std::vector<Edit> edits;
  for (std::size_t i = 0; i < n_edits; ++i) {
    const std::size_t pos = eligible[i];
    const TokenId orig = s.tokens[pos];
    TokenId r = repl(rng);
    if (r >= orig) ++r;
    edits.push_back({pos, orig, r});
  }
  return make_perturbation(s, std::move(edits), PerturbMethod::kRandom);
}

std::vector<double> deletion_importance(ClassifierSession& session, const TokenSequence& s) {
  const double base = session.forward(s).probs[s.label];
  std::vector<double> importance(s.size(), 0.0);
  if (s.size() < 2) return importance;
  TokenSequence reduced = s;
  for (std::size_t i = 0; i < s.size(); ++i) {
    reduced.tokens.assign(s.tokens.begin(), s.tokens.end());
    reduced.tokens.erase(reduced.tokens.begin() + static_cast<std::ptrdiff_t>(i));
    importance[i] = base - session.forward(reduced).probs[s.label];
  }
  return importance;
}

std::vector<Perturbation> greedy_perturbs(const TokenSequence& s, ClassifierSession& session,
                                          const SynonymTable& synonyms, std::size_t max_edits) {
  if (max_edits == 0) throw Error(ErrorCode::kInvalidArgument, "greedy_perturbs: max_edits must be >= 1");
  if (synonyms.vocab_size() != session.model().vocab.size()) {
    throw Error(ErrorCode::kMismatch, "greedy_perturbs: synonym table built for a different vocabulary");
  }
  const std::vector<double> importance = deletion_importance(session, s);
  std::vector<std::size_t> ranked;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (!Vocabulary::is_reserved(s.tokens[i]) && !synonyms.candidates(s.tokens[i]).empty()) ranked.push_back(i);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });

  std::vector<Perturbation> chain;
  std::vector<Edit> edits;
  TokenSequence current = s;
  for (std::size_t pos : ranked) {
    if (edits.size() >= max_edits) break;
    const TokenId orig = s.tokens[pos];
    TokenId best = 0;
    double best_prob = 2.0;
    for (const SynonymCandidate& c : synonyms.candidates(orig)) {
      current.tokens[pos] = c.id;
      const double p = session.forward(current).probs[s.label];
      if (p < best_prob) {
        best_prob = p;
        best = c.id;
      }
    }
    current.tokens[pos] = best;
    edits.push_back({pos, orig, best});
    chain.push_back(make_perturbation(s, edits, PerturbMethod::kGreedy));
  }
  return chain;
}

std::size_t edit_distance(const TokenSequence& s, const Perturbation& p) {
  check_perturbation(s, p);
  return p.edits.size();
}

namespace {

std::vector<double> pooled(const ClassifierModel& model, const TokenSequence& s) {
  const Tensor x = embed(s, model);
  std::vector<double> out(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out[j] += x.at(i, j);
  for (double& v : out) v /= static_cast<double>(x.rows());
  return out;
}

}  // namespace

double similarity_proxy(const ClassifierModel& model, const TokenSequence& s, const Perturbation& p) {
  const auto a = pooled(model, s);
  const auto b = pooled(model, apply(s, p));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::kNumeric, "similarity_proxy: zero-norm pooled embedding");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

}  // namespace pscore
