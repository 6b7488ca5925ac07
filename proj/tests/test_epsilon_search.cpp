#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "perturbscore/epsilon_search.hpp"
#include "perturbscore/error.hpp"
#include "perturbscore/stats.hpp"
#include "support.hpp"

using namespace pscore;
using testsupport::fixture;

namespace {

// logits = x W for a 1x2 input and 2x2 weights; everything in closed form.
class LinearTwoClass final : public EmbeddingClassifier {
 public:
  explicit LinearTwoClass(Tensor w) : w_(std::move(w)) {}
  std::size_t num_classes() const override { return 2; }

  ClassifierOutput forward_from_embeddings(const Tensor& x) override {
    ClassifierOutput out;
    for (std::size_t c = 0; c < 2; ++c) out.logits.push_back(x[0] * w_.at(0, c) + x[1] * w_.at(1, c));
    const double m = std::max(out.logits[0], out.logits[1]);
    const double e0 = std::exp(out.logits[0] - m), e1 = std::exp(out.logits[1] - m);
    out.probs = {e0 / (e0 + e1), e1 / (e0 + e1)};
    return out;
  }

  LossGradient loss_gradient(const Tensor& x, ClassId label) override {
    const auto out = forward_from_embeddings(x);
    LossGradient lg;
    lg.probs = out.probs;
    lg.loss = -std::log(out.probs[label]);
    lg.grad = Tensor({1, 2});
    for (std::size_t c = 0; c < 2; ++c) {
      const double coeff = out.probs[c] - (c == label ? 1.0 : 0.0);
      lg.grad[0] += coeff * w_.at(0, c);
      lg.grad[1] += coeff * w_.at(1, c);
    }
    return lg;
  }

 private:
  Tensor w_;
};

double direct_shift(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / (std::sqrt(na) * std::sqrt(nb));
}

// Copy of the fixture model where token `twin` shares the embedding of `of`.
ClassifierModel with_twin(TokenId of, TokenId twin) {
  ClassifierModel m = fixture().model;
  for (std::size_t j = 0; j < m.params.embedding.cols(); ++j)
    m.params.embedding.at(twin, j) = m.params.embedding.at(of, j);
  return m;
}

}  // namespace

TEST_CASE("projection onto the L2 ball") {
  const Tensor d = Tensor::matrix(1, 2, {1.2, 1.6});  // norm 2
  const Tensor p = project_l2(d, 1.0);
  CHECK(p[0] == doctest::Approx(0.6));
  CHECK(p[1] == doctest::Approx(0.8));
  const Tensor inside = Tensor::matrix(1, 2, {0.1, -0.2});
  CHECK(project_l2(inside, 1.0) == inside);
  CHECK(project_l2(d, 0.0).l2_norm() == 0.0);
  CHECK_THROWS_AS(project_l2(d, -1.0), Error);

  SUBCASE("random deltas stay in the ball and keep their direction") {
    std::mt19937_64 rng(10);
    std::uniform_real_distribution<double> radius(1e-6, 3.0), scale(1e-3, 10.0);
    for (int i = 0; i < 10000; ++i) {
      const std::size_t r = 1 + rng() % 8, c = 1 + rng() % 8;
      const Tensor delta = testsupport::random_tensor({r, c}, rng, scale(rng));
      const double eps = radius(rng);
      const Tensor out = project_l2(delta, eps);
      REQUIRE(out.l2_norm() <= eps + 1e-12);
      double dot = 0;
      for (std::size_t k = 0; k < delta.size(); ++k) dot += delta[k] * out[k];
      REQUIRE(dot / (delta.l2_norm() * out.l2_norm()) >= 1.0 - 1e-12);
    }
  }
}

TEST_CASE("search configuration") {
  SearchConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.grid_size() == 100);
  CHECK(c.grid_value(1) == doctest::Approx(0.01));
  CHECK(c.grid_value(100) == doctest::Approx(1.0));
  SearchConfig bad = c;
  bad.steps = 0;
  bad.band = 0.0;
  try {
    bad.validate();
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
    CHECK(std::string(e.what()).find("steps") != std::string::npos);
    CHECK(std::string(e.what()).find("band") != std::string::npos);
  }
  bad = c;
  bad.interval = 2.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("discrete shift") {
  const auto& f = fixture();
  ClassifierSession session(f.model);
  Rng rng(3);
  SUBCASE("matches the direct formula") {
    for (std::size_t i = 0; i < 30; ++i) {
      const auto& s = f.sequences[i];
      const auto p = random_perturb(s, 2, f.vocab.size(), rng);
      const auto a = forward(f.model, s).probs, b = forward(f.model, apply(s, p)).probs;
      CHECK(discrete_shift(session, s, p) == doctest::Approx(direct_shift(b, a)).epsilon(1e-12));
    }
  }
  SUBCASE("an embedding-identical replacement gives zero") {
    const auto& s = f.sequences[0];
    const TokenId orig = s.tokens[0];
    const TokenId twin = orig == 10 ? 11 : 10;
    const auto m = with_twin(orig, twin);
    ClassifierSession twin_session(m);
    CHECK(discrete_shift(twin_session, s, make_perturbation(s, {{0, orig, twin}}, PerturbMethod::kRandom)) == 0.0);
  }
  SUBCASE("label flips move the output more than label-preserving edits") {
    const auto table = build_synonym_table(f.model, 5);
    double flip_total = 0, keep_total = 0;
    std::size_t flips = 0, keeps = 0;
    for (const auto& s : f.sequences) {
      const ClassId before = forward(f.model, s).predicted();
      for (const auto& p : greedy_perturbs(s, session, table, 4)) {
        const double g = discrete_shift(session, s, p);
        if (forward(f.model, apply(s, p)).predicted() != before) {
          flip_total += g;
          ++flips;
        } else {
          keep_total += g;
          ++keeps;
        }
      }
    }
    MESSAGE("flips " << flips << " keeps " << keeps);
    REQUIRE(flips > 0);
    REQUIRE(keeps > 0);
    CHECK(flip_total / flips > keep_total / keeps);
  }
}

TEST_CASE("PGD contracts") {
  const auto& f = fixture();
  ClassifierSession session(f.model);
  SearchConfig c;
  SUBCASE("zero radius keeps delta at zero") {
    const auto& s = f.sequences[0];
    const auto r = pgd_max_shift(session, embed(s, f.model), s.label, 0.0, c);
    CHECK(r.delta_best.l2_norm() == 0.0);
    CHECK(r.shift_best == 0.0);
    for (const auto& st : r.trace) CHECK(st.delta_norm == 0.0);
  }
  SUBCASE("trace starts at zero, stays in the ball and is finite") {
    for (std::size_t i = 0; i < 20; ++i) {
      const auto& s = f.sequences[i];
      const double eps = 0.05 * (1 + i % 7);
      const auto r = pgd_max_shift(session, embed(s, f.model), s.label, eps, c);
      REQUIRE(r.trace.size() == c.steps + 1);
      CHECK(r.trace[0].delta_norm == 0.0);
      CHECK(r.trace[0].shift == 0.0);
      for (const auto& st : r.trace) {
        CHECK(st.delta_norm <= eps + 1e-12);
        CHECK(std::isfinite(st.shift));
        CHECK(st.shift <= r.shift_best);
      }
    }
  }
  SUBCASE("linear two-class model reaches the optimal boundary point") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor w = testsupport::random_tensor({2, 2}, rng);
      const Tensor x = testsupport::random_tensor({1, 2}, rng);
      const ClassId label = static_cast<ClassId>(trial % 2);
      LinearTwoClass model(w);
      const double eps = 0.3;
      SearchConfig lc;
      lc.steps = 10;
      lc.alpha = 0.1;
      const auto r = pgd_max_shift(model, x, label, eps, lc);
      const ClassId other = 1 - label;
      double dir[2] = {w.at(0, other) - w.at(0, label), w.at(1, other) - w.at(1, label)};
      const double n = std::hypot(dir[0], dir[1]);
      // Final iterate; the trace's last norm is the ball radius.
      CHECK(r.trace.back().delta_norm == doctest::Approx(eps).epsilon(1e-9));
      const auto moved = model.forward_from_embeddings(Tensor::matrix(1, 2, {x[0] + eps * dir[0] / n, x[1] + eps * dir[1] / n}));
      const auto clean = model.forward_from_embeddings(x);
      CHECK(std::abs(r.trace.back().shift - direct_shift(moved.probs, clean.probs)) < 1e-6);
      // The best iterate moves toward the other class along the weight gap.
      if (r.delta_best.l2_norm() == doctest::Approx(eps).epsilon(1e-9)) {
        CHECK(std::abs(r.delta_best[0] - eps * dir[0] / n) < 1e-6);
        CHECK(std::abs(r.delta_best[1] - eps * dir[1] / n) < 1e-6);
      }
    }
  }
}

TEST_CASE("find_epsilon outcomes") {
  const auto& f = fixture();
  ClassifierSession session(f.model);

  SUBCASE("zero discrete shift is accepted at the first radius") {
    const auto& s = f.sequences[1];
    const TokenId orig = s.tokens[2];
    const TokenId twin = orig == 10 ? 11 : 10;
    const auto m = with_twin(orig, twin);
    ClassifierSession twin_session(m);
    SearchConfig c;
    const auto t = find_epsilon(twin_session, s, make_perturbation(s, {{2, orig, twin}}, PerturbMethod::kRandom), c);
    CHECK(t.accepted());
    CHECK(t.gamma == 0.0);
    CHECK(t.epsilon == doctest::Approx(c.interval));
  }
  SUBCASE("a shift beyond reach exhausts the grid") {
    const auto table = build_synonym_table(f.model, 5);
    SearchConfig c;
    c.eps_max = 0.03;
    std::size_t seen = 0;
    for (std::size_t i = 0; i < 40 && seen < 5; ++i) {
      const auto& s = f.sequences[i];
      const auto chain = greedy_perturbs(s, session, table, 6);
      const auto& p = chain.back();
      if (discrete_shift(session, s, p) < 0.5) continue;
      ++seen;
      const auto t = find_epsilon(session, s, p, c);
      CHECK(t.status == TupleStatus::kDiscardedExhausted);
      CHECK(t.epsilon == doctest::Approx(0.03));
      CHECK(t.achieved_shift < t.gamma - c.band);
    }
    CHECK(seen > 0);
  }
  SUBCASE("a coarse grid overshoots a small shift") {
    SearchConfig c;
    c.interval = 0.5;
    c.steps = 1;
    c.alpha = 0.5;
    Rng rng(8);
    std::size_t seen = 0;
    for (std::size_t i = 0; i < f.sequences.size() && seen < 5; ++i) {
      const auto& s = f.sequences[i];
      const auto p = random_perturb(s, 1, f.vocab.size(), rng);
      const double g = discrete_shift(session, s, p);
      if (g < 0.006 || g > 0.012) continue;
      const auto r = pgd_max_shift(session, embed(s, f.model), s.label, 0.5, c);
      if (r.trace[1].shift <= g + c.band) continue;
      ++seen;
      const auto t = find_epsilon(session, s, p, c);
      CHECK(t.status == TupleStatus::kDiscardedOvershoot);
      CHECK(t.epsilon == doctest::Approx(0.5));
      CHECK(t.achieved_shift > t.gamma + c.band);
    }
    CHECK(seen > 0);
  }
}

TEST_CASE("accepted tuples replay and are minimal on the grid") {
  const auto& f = fixture();
  ClassifierSession session(f.model);
  Rng rng(19);
  SearchConfig c;
  c.seed = 42;
  std::size_t accepted = 0, checked_minimal = 0;
  for (std::size_t i = 0; i < 60; ++i) {
    const auto& s = f.sequences[i];
    const auto p = random_perturb(s, 1 + i % 4, f.vocab.size(), rng);
    const auto t = find_epsilon(session, s, p, c);
    const auto again = find_epsilon(session, s, p, c);
    CHECK(again.status == t.status);
    CHECK(again.epsilon == t.epsilon);
    CHECK(again.achieved_shift == t.achieved_shift);
    if (!t.accepted()) continue;
    ++accepted;
    CHECK(std::abs(t.achieved_shift - t.gamma) < c.band);
    if (t.epsilon < 2 * c.interval - 1e-12) continue;
    ++checked_minimal;
    const auto below = pgd_max_shift(session, embed(s, f.model), s.label, t.epsilon - c.interval, c);
    for (const auto& st : below.trace) CHECK(std::abs(st.shift - t.gamma) >= c.band);
  }
  MESSAGE("accepted " << accepted << " minimality checked " << checked_minimal);
  CHECK(checked_minimal > 0);
}

TEST_CASE("mean maximal shift grows with the radius") {
  const auto& f = fixture();
  ClassifierSession session(f.model);
  SearchConfig c;
  std::vector<double> radii;
  for (int k = 1; k <= 10; ++k) radii.push_back(0.05 * k);
  const std::vector<TokenSequence> texts(f.sequences.begin(), f.sequences.begin() + 200);
  const auto curve = shift_curve(session, texts, radii, c);
  CHECK(spearman_rho(radii, curve) >= 0.95);
}

TEST_CASE("longer greedy chains need larger radii") {
  const auto& f = fixture();
  ClassifierSession session(f.model);
  const auto table = build_synonym_table(f.model, 5);
  SearchConfig c;
  std::vector<double> counts, eps;
  for (std::size_t i = 0; i < 40; ++i) {
    for (const auto& p : greedy_perturbs(f.sequences[i], session, table, 4)) {
      const auto t = find_epsilon(session, f.sequences[i], p, c);
      if (!t.accepted()) continue;
      counts.push_back(static_cast<double>(p.size()));
      eps.push_back(t.epsilon);
    }
  }
  REQUIRE(counts.size() > 20);
  CHECK(kendall_tau(counts, eps) > 0.0);
}

TEST_CASE("empirical Lipschitz constant") {
  const auto& f = fixture();
  ClassifierSession session(f.model);
  const std::vector<TokenSequence> texts(f.sequences.begin(), f.sequences.begin() + 20);
  const double l = estimate_lipschitz(session, texts, 0.1, 10, 5);
  CHECK(l > 0.0);
  CHECK(std::isfinite(l));
  CHECK(estimate_lipschitz(session, texts, 0.1, 10, 5) == l);
  CHECK_THROWS_AS(estimate_lipschitz(session, texts, 0.0, 10, 5), Error);
}
