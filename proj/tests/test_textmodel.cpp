#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "perturbscore/error.hpp"
#include "perturbscore/textmodel.hpp"
#include "support.hpp"

using namespace pscore;
using testsupport::fixture;

namespace {

Vocabulary small_vocab() {
  const std::vector<std::string> texts = {"Apple Recalls Batch of PowerBook Batteries", "apple batch"};
  return Vocabulary::build(texts, 100);
}

TokenSequence seq_of(std::vector<TokenId> ids, ClassId label = 0) {
  TokenSequence s;
  s.tokens = std::move(ids);
  s.label = label;
  return s;
}

std::vector<TokenSequence> tiny_corpus() {
  const auto& f = fixture();
  return {f.sequences.begin(), f.sequences.begin() + 120};
}

}  // namespace

TEST_CASE("vocabulary reserves the first four ids") {
  const Vocabulary v = small_vocab();
  CHECK(v.token(Vocabulary::kOpen) == "[");
  CHECK(v.token(Vocabulary::kClose) == "]");
  CHECK(v.id("zzzunknownzzz") == Vocabulary::kUnk);
  CHECK(Vocabulary::is_reserved(Vocabulary::kPad));
  CHECK_FALSE(Vocabulary::is_reserved(v.id("apple")));
}

TEST_CASE("tokenize") {
  const Vocabulary v = small_vocab();
  SUBCASE("lowercased lookup") {
    const auto s = tokenize("Apple Recalls Batch", v, 256);
    CHECK(s.tokens == std::vector<TokenId>{v.id("apple"), v.id("recalls"), v.id("batch")});
  }
  SUBCASE("unknown word") {
    CHECK(tokenize("zzzunknownzzz", v, 256).tokens == std::vector<TokenId>{Vocabulary::kUnk});
  }
  SUBCASE("punctuation splits words") {
    CHECK(tokenize("apple,batch.", v, 256).size() == 2);
  }
  SUBCASE("truncation") {
    std::string text;
    for (int i = 0; i < 600; ++i) text += "apple ";
    CHECK(tokenize(text, v, 256).size() == 256);
  }
  SUBCASE("empty text") {
    CHECK_THROWS_AS(tokenize("  ,, ", v, 256), Error);
  }
}

TEST_CASE("embed copies embedding rows") {
  const auto& f = fixture();
  const auto seq = seq_of({7, 7, 9});
  const Tensor x = embed(seq, f.model);
  REQUIRE(x.rows() == 3);
  for (std::size_t c = 0; c < x.cols(); ++c) {
    CHECK(x.at(0, c) == f.model.params.embedding.at(7, c));
    CHECK(x.at(0, c) == x.at(1, c));
    CHECK(x.at(2, c) == f.model.params.embedding.at(9, c));
  }
}

TEST_CASE("forward on tokens equals forward on their embeddings") {
  const auto& f = fixture();
  for (std::size_t i = 0; i < 20; ++i) {
    const auto& s = f.sequences[i];
    const auto a = forward(f.model, s);
    const auto b = forward_from_embeddings(f.model, embed(s, f.model));
    CHECK(a.probs == b.probs);
    CHECK(a.logits == b.logits);
  }
}

TEST_CASE("zero model outputs the uniform distribution") {
  const auto& f = fixture();
  ClassifierConfig mc;
  mc.num_classes = 3;
  const auto zero = ClassifierModel::zeros(f.vocab, mc);
  const auto out = forward(zero, f.sequences.front());
  for (double p : out.probs) CHECK(p == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("probabilities sum to one for random inputs") {
  const auto& f = fixture();
  std::mt19937_64 rng(1);
  ClassifierSession session(f.model);
  for (int i = 0; i < 200; ++i) {
    const std::size_t len = 1 + rng() % 20;
    const Tensor x = testsupport::random_tensor({len, f.model.config.embed_dim}, rng, 1.0 + i % 5);
    const auto out = session.forward_from_embeddings(x);
    CHECK(std::abs(std::accumulate(out.probs.begin(), out.probs.end(), 0.0) - 1.0) < 1e-9);
  }
}

TEST_CASE("non-finite embeddings are rejected") {
  const auto& f = fixture();
  Tensor x({2, f.model.config.embed_dim}, 0.0);
  x[1] = std::nan("");
  try {
    forward_from_embeddings(f.model, x);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNumeric);
  }
}

TEST_CASE("loss gradient with respect to embeddings matches finite differences") {
  const auto& f = fixture();
  ClassifierSession session(f.model);
  double worst = 0.0;
  for (std::size_t i = 0; i < 30; ++i) {
    const auto& s = f.sequences[i];
    const Tensor x = embed(s, f.model);
    const auto lg = session.loss_gradient(x, s.label);
    const Tensor numeric =
        finite_diff_grad([&](const Tensor& t) { return session.loss_gradient(t, s.label).loss; }, x, 1e-4);
    worst = std::max(worst, testsupport::max_relative_error(lg.grad, numeric));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("output shift") {
  const std::vector<double> a = {0.3, 0.7}, b = {0.6, 0.4};
  CHECK(model_output_shift(a, a) == 0.0);
  CHECK(model_output_shift(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == doctest::Approx(std::sqrt(2.0)));
  CHECK(model_output_shift(a, b) == model_output_shift(b, a));

  SUBCASE("invariant under a rotation applied to both outputs") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> u(3), v(3);
      for (auto& x : u) x = unit(rng);
      for (auto& x : v) x = unit(rng);
      const double th = 6.283 * unit(rng);
      auto rot = [&](std::vector<double> w) {
        const double p = std::cos(th) * w[0] - std::sin(th) * w[1];
        const double q = std::sin(th) * w[0] + std::cos(th) * w[1];
        w[0] = p;
        w[1] = q;
        return w;
      };
      CHECK(model_output_shift(rot(u), rot(v)) == doctest::Approx(model_output_shift(u, v)).epsilon(1e-12));
    }
  }
  SUBCASE("zero output is degenerate") {
    CHECK_THROWS_AS(model_output_shift(std::vector<double>{0, 0}, a), Error);
  }
}

TEST_CASE("training on the keyword corpus separates the classes") {
  const auto& f = fixture();
  MESSAGE("held-out accuracy " << f.test_accuracy);
  CHECK(f.test_accuracy >= 0.95);
}

TEST_CASE("training contracts") {
  const auto& f = fixture();
  const auto corpus = tiny_corpus();
  ClassifierConfig mc;
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 21;

  SUBCASE("zero epochs return the initialized model") {
    TrainConfig zero = tc;
    zero.epochs = 0;
    const auto r = train_classifier(f.vocab, corpus, mc, zero);
    const auto init = ClassifierModel::initialize(f.vocab, mc, zero.seed);
    CHECK(r.model.params.all().size() == ClassifierParams::kCount);
    for (std::size_t i = 0; i < ClassifierParams::kCount; ++i) CHECK(*r.model.params.all()[i] == *init.params.all()[i]);
  }
  SUBCASE("same seed is bit-identical") {
    const auto a = train_classifier(f.vocab, corpus, mc, tc);
    const auto b = train_classifier(f.vocab, corpus, mc, tc);
    for (std::size_t i = 0; i < ClassifierParams::kCount; ++i) CHECK(*a.model.params.all()[i] == *b.model.params.all()[i]);
  }
  SUBCASE("one class is rejected") {
    std::vector<TokenSequence> one;
    for (const auto& s : corpus)
      if (s.label == 0) one.push_back(s);
    CHECK_THROWS_AS(train_classifier(f.vocab, one, mc, tc), Error);
  }
  SUBCASE("a diverging learning rate names the epoch") {
    TrainConfig bad = tc;
    bad.learning_rate = std::numeric_limits<double>::infinity();
    try {
      train_classifier(f.vocab, corpus, mc, bad);
      FAIL("expected divergence");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNumeric);
      CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
  }
  SUBCASE("early stop holds out validation rows and stops") {
    TrainConfig stop = tc;
    stop.epochs = 30;
    stop.stop_accuracy = 0.5;
    const auto r = train_classifier(f.vocab, f.sequences, mc, stop);
    CHECK(r.log.size() < 30);
    CHECK(r.log.back().validation_accuracy >= 0.5);
  }
}

TEST_CASE("adversarial training") {
  const auto& f = fixture();
  const auto corpus = tiny_corpus();
  ClassifierConfig mc;
  TrainConfig tc;
  tc.epochs = 2;
  tc.seed = 5;

  SUBCASE("a zero radius reproduces standard training") {
    AdvTrainConfig adv;
    adv.epsilon = 0.0;
    const auto a = train_classifier(f.vocab, corpus, mc, tc);
    const auto b = adv_train_classifier(f.vocab, corpus, mc, tc, adv);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t e = 0; e < a.log.size(); ++e) CHECK(a.log[e].train_loss == b.log[e].train_loss);
    for (std::size_t i = 0; i < ClassifierParams::kCount; ++i) CHECK(*a.model.params.all()[i] == *b.model.params.all()[i]);
  }
  SUBCASE("inner perturbations stay in the ball") {
    AdvTrainConfig adv;
    adv.epsilon = 0.3;
    adv.alpha = 0.2;
    const auto r = adv_train_classifier(f.vocab, corpus, mc, tc, adv);
    for (const auto& e : r.log) {
      CHECK(e.max_delta_norm <= adv.epsilon + 1e-9);
      CHECK(e.mean_delta_norm > 0.0);
    }
  }
}

TEST_CASE("classifier save and load round trip") {
  const auto& f = fixture();
  const auto dir = testsupport::temp_dir("textmodel");
  const std::string path = (dir / "model.bin").string();
  save_classifier(f.model, path);
  const auto back = load_classifier(path);
  CHECK(back.vocab.tokens() == f.vocab.tokens());
  for (std::size_t i = 0; i < ClassifierParams::kCount; ++i) CHECK(*back.params.all()[i] == *f.model.params.all()[i]);
  CHECK(back.id() == f.model.id());
  CHECK_THROWS_AS(load_classifier((dir / "missing.bin").string()), Error);
}
