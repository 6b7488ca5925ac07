#pragma once

// Norm-bound search: for a discrete perturbation P(S), find the smallest
// L2 radius epsilon on a fixed grid whose PGD perturbation of the embedding
// matrix shifts the model output as much as P(S) does (within +/- band).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "perturbscore/perturbgen.hpp"
#include "perturbscore/textmodel.hpp"

namespace pscore {

struct SearchConfig {
  std::size_t steps = 15;   // PGD updates per radius
  double alpha = 0.1;       // PGD step length
  double interval = 0.01;   // radius grid spacing
  double band = 0.005;      // acceptance half-width around the discrete shift
  double eps_max = 1.0;     // last radius on the grid
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t grid_size() const;
  // k-th radius, 1-based: k * interval.
  double grid_value(std::size_t k) const;
  std::uint64_t hash() const;
};

// Euclidean projection onto the closed ball of radius eps.
Tensor project_l2(const Tensor& delta, double eps);

struct PgdStep {
  double delta_norm = 0.0;
  double shift = 0.0;
};

struct PgdResult {
  Tensor delta_best;
  double shift_best = 0.0;
  std::vector<PgdStep> trace;  // trace[0] is delta_0 = 0
  bool plateau = false;        // stopped on a zero gradient
  std::optional<std::size_t> band_step;
};

// delta_0 = 0; delta_{t+1} = Proj(delta_t + alpha * g / ||g||), g the
// cross-entropy gradient at x + delta_t against `label`.
PgdResult pgd_max_shift(EmbeddingClassifier& model, const Tensor& x, ClassId label, double eps,
                        const SearchConfig& config);

// Same iteration, stopping at the first step whose shift lies in
// (gamma - band, gamma + band).
PgdResult pgd_until_band(EmbeddingClassifier& model, const Tensor& x, ClassId label, double eps,
                         const SearchConfig& config, double gamma);

double discrete_shift(ClassifierSession& session, const TokenSequence& s, const Perturbation& p);

enum class TupleStatus { kAccepted, kDiscardedOvershoot, kDiscardedExhausted };

const char* status_name(TupleStatus s);
TupleStatus parse_status(std::string_view name);

struct DataTuple {
  std::uint64_t text_hash = 0;
  ClassId label = 0;
  Perturbation perturbation;
  double epsilon = 0.0;         // accepted radius, or the radius where the search stopped
  double gamma = 0.0;           // discrete shift
  double achieved_shift = 0.0;  // continuous shift at acceptance / overshoot / best seen
  TupleStatus status = TupleStatus::kDiscardedExhausted;
  std::uint64_t seed = 0;
  std::size_t edit_distance = 0;
  double similarity = 1.0;

  bool accepted() const noexcept { return status == TupleStatus::kAccepted; }
};

DataTuple find_epsilon(ClassifierSession& session, const TokenSequence& s, const Perturbation& p,
                       const SearchConfig& config);

// Mean over texts of the maximal continuous shift reached at each radius.
std::vector<double> shift_curve(ClassifierSession& session, std::span<const TokenSequence> texts,
                                std::span<const double> radii, const SearchConfig& config);

// Largest observed ||f(X+delta) - f(X)|| / ||delta|| over random directions
// at radius eps; an empirical Lipschitz constant of the probability map.
double estimate_lipschitz(ClassifierSession& session, std::span<const TokenSequence> texts, double eps,
                          std::size_t samples_per_text, std::uint64_t seed);

}  // namespace pscore
