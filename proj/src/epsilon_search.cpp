#include "perturbscore/epsilon_search.hpp"

#include <bit>
#include <cmath>
#include <random>

#include "perturbscore/error.hpp"
#include "perturbscore/hash.hpp"

namespace pscore {

void SearchConfig::validate() const {
  std::string problems;
  if (steps < 1) problems += " steps must be >= 1;";
  if (!(alpha > 0.0)) problems += " alpha must be > 0;";
  if (!(interval > 0.0) || !(interval < eps_max)) problems += " interval must satisfy 0 < interval < eps_max;";
  if (!(band > 0.0)) problems += " band must be > 0;";
  if (!problems.empty()) throw Error(ErrorCode::kConfig, "search config:" + problems);
}

std::size_t SearchConfig::grid_size() const {
  return static_cast<std::size_t>(std::floor(eps_max / interval + 1e-9));
}

double SearchConfig::grid_value(std::size_t k) const { return static_cast<double>(k) * interval; }

std::uint64_t SearchConfig::hash() const {
  Fnv1a h;
  h.u64(steps)
      .u64(std::bit_cast<std::uint64_t>(alpha))
      .u64(std::bit_cast<std::uint64_t>(interval))
      .u64(std::bit_cast<std::uint64_t>(band))
      .u64(std::bit_cast<std::uint64_t>(eps_max));
  return h.value();
}

Tensor project_l2(const Tensor& delta, double eps) {
  if (eps < 0.0) throw Error(ErrorCode::kInvalidArgument, "project_l2: negative radius");
  if (eps == 0.0) return Tensor(delta.shape());
  const double norm = delta.l2_norm();
  if (norm <= eps) return delta;
  Tensor out = delta;
  const double scale = eps / norm;
  for (double& v : out.data()) v *= scale;
  // Rounding can leave the norm a few ulps above eps; pull it back in.
  for (int guard = 0; guard < 4 && out.l2_norm() > eps; ++guard)
    for (double& v : out.data()) v *= 1.0 - 1e-15;
  return out;
}

namespace {

PgdResult run_pgd(EmbeddingClassifier& model, const Tensor& x, ClassId label, double eps,
                  const SearchConfig& config, std::optional<double> gamma) {
  if (eps < 0.0) throw Error(ErrorCode::kInvalidArgument, "pgd: negative radius");
  PgdResult r;
  Tensor delta(x.shape());
  r.delta_best = delta;
  std::vector<double> clean;
  for (std::size_t t = 0;; ++t) {
    const bool last = t == config.steps;
    LossGradient lg = model.loss_gradient(t == 0 ? x : x + delta, label);
    if (t == 0) clean = lg.probs;
    const double shift = t == 0 ? 0.0 : model_output_shift(lg.probs, clean);
    r.trace.push_back({delta.l2_norm(), shift});
    if (shift > r.shift_best || t == 0) {
      r.shift_best = shift;
      r.delta_best = delta;
    }
    if (gamma && std::abs(shift - *gamma) < config.band) {
      r.band_step = t;
      return r;
    }
    if (last) return r;
    const double gn = lg.grad.l2_norm();
    if (gn == 0.0) {
      r.plateau = true;
      return r;
    }
    Tensor stepped = delta;
    const double scale = config.alpha / gn;
    for (std::size_t i = 0; i < stepped.size(); ++i) stepped[i] += scale * lg.grad[i];
    delta = project_l2(stepped, eps);
  }
}

}  // namespace

PgdResult pgd_max_shift(EmbeddingClassifier& model, const Tensor& x, ClassId label, double eps,
                        const SearchConfig& config) {
  return run_pgd(model, x, label, eps, config, std::nullopt);
}

PgdResult pgd_until_band(EmbeddingClassifier& model, const Tensor& x, ClassId label, double eps,
                         const SearchConfig& config, double gamma) {
  return run_pgd(model, x, label, eps, config, gamma);
}

double discrete_shift(ClassifierSession& session, const TokenSequence& s, const Perturbation& p) {
  const auto clean = session.forward(s);
  const auto perturbed = session.forward(apply(s, p));
  return model_output_shift(perturbed.probs, clean.probs);
}

const char* status_name(TupleStatus s) {
  switch (s) {
    case TupleStatus::kAccepted: return "accepted";
    case TupleStatus::kDiscardedOvershoot: return "discarded_overshoot";
    case TupleStatus::kDiscardedExhausted: return "discarded_exhausted";
  }
  return "?";
}

TupleStatus parse_status(std::string_view name) {
  if (name == "accepted") return TupleStatus::kAccepted;
  if (name == "discarded_overshoot") return TupleStatus::kDiscardedOvershoot;
  if (name == "discarded_exhausted") return TupleStatus::kDiscardedExhausted;
  throw Error(ErrorCode::kParse, "unknown tuple status '" + std::string(name) + "'");
}

DataTuple find_epsilon(ClassifierSession& session, const TokenSequence& s, const Perturbation& p,
                       const SearchConfig& config) {
  config.validate();
  DataTuple tuple;
  tuple.text_hash = s.hash();
  tuple.label = s.label;
  tuple.perturbation = p;
  tuple.seed = config.seed;
  tuple.edit_distance = edit_distance(s, p);
  tuple.gamma = discrete_shift(session, s, p);

  const Tensor x = embed(s, session.model());
  const std::size_t n = config.grid_size();
  double best_seen = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double eps = config.grid_value(k);
    const PgdResult r = pgd_until_band(session, x, s.label, eps, config, tuple.gamma);
    if (r.band_step) {
      tuple.status = TupleStatus::kAccepted;
      tuple.epsilon = eps;
      tuple.achieved_shift = r.trace[*r.band_step].shift;
      return tuple;
    }
    if (r.shift_best > tuple.gamma + config.band) {
      tuple.status = TupleStatus::kDiscardedOvershoot;
      tuple.epsilon = eps;
      tuple.achieved_shift = r.shift_best;
      return tuple;
    }
    best_seen = std::max(best_seen, r.shift_best);
  }
  tuple.status = TupleStatus::kDiscardedExhausted;
  tuple.epsilon = config.grid_value(n);
  tuple.achieved_shift = best_seen;
  return tuple;
}

std::vector<double> shift_curve(ClassifierSession& session, std::span<const TokenSequence> texts,
                                std::span<const double> radii, const SearchConfig& config) {
  std::vector<double> mean(radii.size(), 0.0);
  if (texts.empty()) return mean;
  for (const auto& s : texts) {
    const Tensor x = embed(s, session.model());
    for (std::size_t i = 0; i < radii.size(); ++i) {
      mean[i] += pgd_max_shift(session, x, s.label, radii[i], config).shift_best;
    }
  }
  for (double& m : mean) m /= static_cast<double>(texts.size());
  return mean;
}

double estimate_lipschitz(ClassifierSession& session, std::span<const TokenSequence> texts, double eps,
                          std::size_t samples_per_text, std::uint64_t seed) {
  if (!(eps > 0.0)) throw Error(ErrorCode::kInvalidArgument, "estimate_lipschitz: eps must be > 0");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  double worst = 0.0;
  for (const auto& s : texts) {
    const Tensor x = embed(s, session.model());
    const auto clean = session.forward_from_embeddings(x).probs;
    for (std::size_t k = 0; k < samples_per_text; ++k) {
      Tensor delta(x.shape());
      for (double& v : delta.data()) v = normal(rng);
      const double norm = delta.l2_norm();
      if (norm == 0.0) continue;
      delta = (eps / norm) * delta;
      const auto moved = session.forward_from_embeddings(x + delta).probs;
      double diff = 0.0;
      for (std::size_t j = 0; j < moved.size(); ++j) diff += (moved[j] - clean[j]) * (moved[j] - clean[j]);
      worst = std::max(worst, std::sqrt(diff) / eps);
    }
  }
  return worst;
}

}  // namespace pscore
