#pragma once

// Test-only helpers: brute-force reference implementations that share no
// code with the library, a random autodiff graph generator, and a small
// trained classifier fixture reused across suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "perturbscore/diffcore.hpp"
#include "perturbscore/pipeline.hpp"
#include "perturbscore/textmodel.hpp"

namespace testsupport {

// ------------------------------------------------------------ correlation

struct PairCounts {
  long concordant = 0, discordant = 0, tied_x = 0, tied_y = 0, pairs = 0;
};

inline PairCounts count_pairs(std::span<const double> xs, std::span<const double> ys) {
  PairCounts c;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = i + 1; j < xs.size(); ++j) {
      ++c.pairs;
      const double dx = xs[i] - xs[j], dy = ys[i] - ys[j];
      if (dx == 0.0) ++c.tied_x;
      if (dy == 0.0) ++c.tied_y;
      if (dx * dy > 0.0) ++c.concordant;
      else if (dx * dy < 0.0) ++c.discordant;
    }
  return c;
}

inline double brute_kendall_b(std::span<const double> xs, std::span<const double> ys) {
  const PairCounts c = count_pairs(xs, ys);
  const double denom = std::sqrt(static_cast<double>(c.pairs - c.tied_x) * static_cast<double>(c.pairs - c.tied_y));
  return static_cast<double>(c.concordant - c.discordant) / denom;
}

inline std::vector<double> brute_ranks(std::span<const double> xs) {
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double less = 0, equal = 0;
    for (double v : xs) {
      if (v < xs[i]) ++less;
      if (v == xs[i]) ++equal;
    }
    r[i] = less + (equal + 1.0) / 2.0;
  }
  return r;
}

// Single-formula product-moment coefficient in long double.
inline double straight_pearson(std::span<const double> xs, std::span<const double> ys) {
  const long double n = static_cast<long double>(xs.size());
  long double sx = 0, sy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
  }
  const long double mx = sx / n, my = sy / n;
  long double cov = 0, vx = 0, vy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    cov += (xs[i] - mx) * (ys[i] - my);
    vx += (xs[i] - mx) * (xs[i] - mx);
    vy += (ys[i] - my) * (ys[i] - my);
  }
  return static_cast<double>(cov / std::sqrt(vx * vy));
}

inline double brute_spearman(std::span<const double> xs, std::span<const double> ys) {
  const auto rx = brute_ranks(xs), ry = brute_ranks(ys);
  return straight_pearson(rx, ry);
}

// Every length-n list over `alphabet`, in lexicographic order.
inline std::vector<std::vector<double>> all_lists(std::size_t n, const std::vector<double>& alphabet) {
  std::vector<std::vector<double>> out;
  std::vector<std::size_t> idx(n, 0);
  while (true) {
    std::vector<double> l(n);
    for (std::size_t i = 0; i < n; ++i) l[i] = alphabet[idx[i]];
    out.push_back(std::move(l));
    std::size_t k = n;
    while (k > 0 && ++idx[k - 1] == alphabet.size()) idx[--k] = 0;
    if (k == 0) break;
  }
  return out;
}

inline bool all_equal(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [&](double v) { return v == xs.front(); });
}

// Full dynamic-programming Levenshtein distance over token ids.
template <typename T>
std::size_t levenshtein(const std::vector<T>& a, const std::vector<T>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// -------------------------------------------------------------- gradients

// |a - b| / max(|a|, |b|, floor); the floor keeps near-zero entries from
// turning rounding noise into large ratios.
inline double relative_error(double a, double b, double floor = 1e-3) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_relative_error(const pscore::Tensor& a, const pscore::Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i]));
  return worst;
}

inline pscore::Tensor random_tensor(const pscore::Shape& shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  pscore::Tensor t(shape);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

struct RandomGraph {
  pscore::Graph graph;
  std::vector<pscore::NodeId> inputs;
  std::vector<pscore::NodeId> relu_args;
  std::vector<std::string> ops;
};

// A chain of up to `max_depth` ops over random inputs with dims <= max_dim,
// reduced to a scalar by a random weighted sum unless it already is one.
inline RandomGraph make_random_graph(std::mt19937_64& rng, std::size_t max_depth = 4, std::size_t max_dim = 8) {
  auto dim = [&] { return std::uniform_int_distribution<std::size_t>(1, max_dim)(rng); };
  RandomGraph rg;
  auto& g = rg.graph;
  auto new_input = [&](std::size_t r, std::size_t c) {
    const pscore::NodeId id = g.input("in" + std::to_string(rg.inputs.size()));
    g.bind(id, random_tensor({r, c}, rng));
    rg.inputs.push_back(id);
    return id;
  };
  std::size_t rows = dim(), cols = dim();
  pscore::NodeId cur = new_input(rows, cols);
  bool scalar = false;
  const std::size_t depth = std::uniform_int_distribution<std::size_t>(1, max_depth)(rng);
  for (std::size_t step = 0; step < depth && !scalar; ++step) {
    switch (std::uniform_int_distribution<int>(0, 10)(rng)) {
      case 0: {
        const std::size_t k = dim();
        cur = g.matmul(cur, new_input(cols, k));
        cols = k;
        rg.ops.push_back("matmul");
        break;
      }
      case 1: {
        const std::size_t k = dim();
        cur = g.matmul(new_input(k, rows), cur);
        rows = k;
        rg.ops.push_back("matmul_left");
        break;
      }
      case 2: cur = g.add(cur, new_input(rows, cols)); rg.ops.push_back("add"); break;
      case 3: cur = g.add(cur, new_input(1, cols)); rg.ops.push_back("add_bias"); break;
      case 4: cur = g.multiply(cur, new_input(rows, cols)); rg.ops.push_back("multiply"); break;
      case 5: cur = g.tanh(cur); rg.ops.push_back("tanh"); break;
      case 6:
        rg.relu_args.push_back(cur);
        cur = g.relu(cur);
        rg.ops.push_back("relu");
        break;
      case 7: cur = g.softmax(cur); rg.ops.push_back("softmax"); break;
      case 8: cur = g.log(g.softmax(cur)); rg.ops.push_back("log_softmax"); break;
      case 9: {
        const std::size_t axis = std::uniform_int_distribution<std::size_t>(0, 1)(rng);
        cur = g.mean(cur, axis);
        (axis == 0 ? rows : cols) = 1;
        rg.ops.push_back(axis == 0 ? "mean0" : "mean1");
        break;
      }
      default:
        cur = g.l2_norm(cur);
        scalar = true;
        rg.ops.push_back("l2_norm");
        break;
    }
  }
  if (!scalar) cur = g.sum(g.multiply(cur, new_input(rows, cols)));
  g.set_output(cur);
  return rg;
}

struct GradCheck {
  double max_rel_error = 0.0;
  bool skipped = false;  // a ReLU argument sat too close to its kink
};

inline GradCheck check_graph_gradients(RandomGraph& rg, double h = 1e-4) {
  GradCheck out;
  auto& g = rg.graph;
  g.forward();
  for (pscore::NodeId id : rg.relu_args)
    for (double v : g.value(id).data())
      if (std::abs(v) < 10 * h) out.skipped = true;
  if (out.skipped) return out;
  const auto analytic = g.backward(rg.inputs);
  for (pscore::NodeId id : rg.inputs) {
    const pscore::Tensor base = g.bound(id);
    auto f = [&](const pscore::Tensor& x) {
      g.bind(id, x);
      return g.forward().item();
    };
    const pscore::Tensor numeric = pscore::finite_diff_grad(f, base, h);
    g.bind(id, base);
    out.max_rel_error = std::max(out.max_rel_error, max_relative_error(analytic.at(id), numeric));
  }
  return out;
}

// ------------------------------------------------------------- fixtures

inline pscore::SynthConfig small_synth(std::uint64_t seed = 11) {
  pscore::SynthConfig c;
  c.texts = 300;
  c.vocab = 300;
  c.min_len = 8;
  c.max_len = 16;
  c.strong_per_class = 10;
  c.weak_per_class = 30;
  c.seed = seed;
  return c;
}

struct Fixture {
  std::vector<pscore::LabeledText> texts;
  pscore::Vocabulary vocab;
  std::vector<pscore::TokenSequence> sequences;
  pscore::ClassifierModel model;
  double test_accuracy = 0.0;
};

inline Fixture make_fixture(std::uint64_t seed = 11) {
  Fixture f;
  f.texts = pscore::synth_corpus(small_synth(seed));
  std::vector<std::string> raw;
  for (const auto& t : f.texts) raw.push_back(t.text);
  f.vocab = pscore::Vocabulary::build(raw, 1000);
  for (const auto& t : f.texts) f.sequences.push_back(pscore::tokenize(t.text, f.vocab, 64, t.label));
  pscore::ClassifierConfig mc;
  pscore::TrainConfig tc;
  tc.epochs = 8;
  tc.learning_rate = 0.5;
  tc.seed = seed;
  auto r = pscore::train_classifier(f.vocab, f.sequences, mc, tc);
  f.model = std::move(r.model);
  f.test_accuracy = r.test_accuracy;
  return f;
}

// Built once per test binary.
inline const Fixture& fixture() {
  static const Fixture f = make_fixture();
  return f;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pscore_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testsupport
