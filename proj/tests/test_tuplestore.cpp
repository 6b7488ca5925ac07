#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "doctest.h"
#include "perturbscore/error.hpp"
#include "perturbscore/tuplestore.hpp"
#include "support.hpp"

using namespace pscore;
using nlohmann::json;

namespace {

const std::vector<std::string> kWords = {"it", "would", "recall", "about", "reminds", "batteries", "used"};

Vocabulary word_vocab() {
  std::string all;
  for (const auto& w : kWords) all += w + " ";
  const std::vector<std::string> texts = {all};
  return Vocabulary::build(texts, 100);
}

std::string render(std::span<const TokenId> ids, const Vocabulary& v) {
  std::string out;
  for (TokenId t : ids) out += (out.empty() ? "" : " ") + v.token(t);
  return out;
}

TokenSequence fake_text(std::uint64_t i) {
  TokenSequence s;
  s.tokens = {static_cast<TokenId>(4 + i % 7), static_cast<TokenId>(4 + (i / 7) % 7), static_cast<TokenId>(4 + i % 5)};
  s.raw_text = "text " + std::to_string(i);
  return s;
}

DataTuple tuple_for(const TokenSequence& s, std::size_t pos, TokenId repl, double eps) {
  DataTuple t;
  t.perturbation = make_perturbation(s, {{pos, s.tokens[pos], repl}}, PerturbMethod::kRandom);
  t.text_hash = s.hash();
  t.epsilon = eps;
  t.gamma = eps / 2;
  t.achieved_shift = eps / 2 + 0.001;
  t.status = TupleStatus::kAccepted;
  t.seed = 9;
  t.edit_distance = 1;
  t.similarity = 0.75;
  return t;
}

bool same_tuple(const DataTuple& a, const DataTuple& b) {
  return a.text_hash == b.text_hash && a.perturbation == b.perturbation && a.epsilon == b.epsilon &&
         a.gamma == b.gamma && a.achieved_shift == b.achieved_shift && a.status == b.status && a.seed == b.seed &&
         a.label == b.label && a.edit_distance == b.edit_distance && a.similarity == b.similarity;
}

}  // namespace

TEST_CASE("scorer input marks the replacement behind the original") {
  const Vocabulary v = word_vocab();
  const auto s = tokenize("it would recall about", v, 64);
  const auto p = make_perturbation(s, {{2, v.id("recall"), v.id("reminds")}}, PerturbMethod::kGreedy);
  const auto ids = encode_scorer_input(s, p, 64);
  CHECK(render(ids, v) == "it would recall [ reminds ] about");

  const auto back = decode_scorer_input(ids);
  CHECK(back.tokens == s.tokens);
  REQUIRE(back.edits.size() == 1);
  CHECK(back.edits[0] == p.edits[0]);
}

TEST_CASE("decode inverts encode on random perturbations") {
  const auto& f = testsupport::fixture();
  Rng rng(6);
  for (std::size_t i = 0; i < 300; ++i) {
    const auto& s = f.sequences[i % f.sequences.size()];
    const auto p = random_perturb(s, 1 + i % std::min<std::size_t>(5, s.size()), f.vocab.size(), rng);
    const auto d = decode_scorer_input(encode_scorer_input(s, p, 256));
    CHECK(d.tokens == s.tokens);
    CHECK(d.edits == p.edits);
  }
  const std::vector<TokenId> bad = {5, Vocabulary::kClose};
  CHECK_THROWS_AS(decode_scorer_input(bad), Error);
}

TEST_CASE("truncation that would cut an edit is rejected and counted") {
  const Vocabulary v = word_vocab();
  const auto s = tokenize("it would recall about batteries used", v, 64);
  const auto late = make_perturbation(s, {{5, v.id("used"), v.id("it")}}, PerturbMethod::kRandom);
  CHECK_THROWS_AS(encode_scorer_input(s, late, 6), Error);
  const auto early = make_perturbation(s, {{0, v.id("it"), v.id("used")}}, PerturbMethod::kRandom);
  CHECK(encode_scorer_input(s, early, 6).size() == 6);

  std::unordered_map<std::uint64_t, TokenSequence> texts{{s.hash(), s}};
  DataTuple a = tuple_for(s, 5, v.id("it"), 0.2), b = tuple_for(s, 0, v.id("used"), 0.1);
  DataTuple c = tuple_for(s, 1, v.id("it"), 0.3);
  c.status = TupleStatus::kDiscardedOvershoot;
  const std::vector<DataTuple> all = {a, b, c};
  const auto ds = build_scorer_dataset(all, texts, v, 6, "tag");
  CHECK(ds.examples.size() == 1);
  CHECK(ds.rejected == 1);
  CHECK(ds.vocab_hash == v.hash());
  CHECK(ds.examples[0].target == 0.1);
}

TEST_CASE("text-level split") {
  std::vector<DataTuple> tuples;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto s = fake_text(i * 13 + 1);
    DataTuple t = tuple_for(s, 0, 20, 0.05);
    t.text_hash = 1000 + i;
    t.perturbation.parent_hash = t.text_hash;
    tuples.push_back(t);
    t.epsilon = 0.07;
    tuples.push_back(t);
  }
  const auto split = split_dataset(tuples, 0.8, 7);
  std::set<std::uint64_t> train, test;
  for (const auto& t : split.train) train.insert(t.text_hash);
  for (const auto& t : split.test) test.insert(t.text_hash);
  CHECK(train.size() == 80);
  CHECK(test.size() == 20);
  CHECK(split.train.size() + split.test.size() == tuples.size());
  std::vector<std::uint64_t> both;
  std::set_intersection(train.begin(), train.end(), test.begin(), test.end(), std::back_inserter(both));
  CHECK(both.empty());

  const auto again = split_dataset(tuples, 0.8, 7);
  CHECK(again.train.size() == split.train.size());
  for (std::size_t i = 0; i < again.train.size(); ++i) CHECK(again.train[i].text_hash == split.train[i].text_hash);

  std::vector<DataTuple> shuffled = tuples;
  std::mt19937_64 rng(3);
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::set<std::uint64_t> train2;
  for (const auto& t : split_dataset(shuffled, 0.8, 7).train) train2.insert(t.text_hash);
  CHECK(train2 == train);

  CHECK_THROWS_AS(split_dataset(std::vector<DataTuple>(tuples.begin(), tuples.begin() + 2), 0.8, 1), Error);
  CHECK_THROWS_AS(split_dataset(tuples, 1.0, 1), Error);
}

TEST_CASE("jsonl files") {
  const auto dir = testsupport::temp_dir("tuplestore");
  SUBCASE("round trip") {
    std::vector<json> records;
    for (int i = 0; i < 10; ++i) records.push_back({{"i", i}, {"x", 0.1 * i}});
    const std::string path = (dir / "a.jsonl").string();
    write_jsonl(path, records);
    CHECK(read_jsonl(path) == records);
  }
  SUBCASE("empty file") {
    const std::string path = (dir / "empty.jsonl").string();
    std::ofstream(path).close();
    CHECK(read_jsonl(path).empty());
  }
  SUBCASE("a corrupted line is named") {
    const std::string path = (dir / "bad.jsonl").string();
    {
      std::ofstream out(path);
      for (int i = 1; i <= 10; ++i) out << (i == 7 ? "{\"i\": 7," : "{\"i\": " + std::to_string(i) + "}") << "\n";
    }
    try {
      read_jsonl(path);
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kParse);
      CHECK(std::string(e.what()).find(":7:") != std::string::npos);
    }
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_jsonl((dir / "nope.jsonl").string()), Error); }
}

TEST_CASE("tuples and perturbations survive a file round trip") {
  const auto& f = testsupport::fixture();
  const auto dir = testsupport::temp_dir("tuples");
  Rng rng(12);
  std::vector<DataTuple> tuples;
  std::vector<Perturbation> ps;
  for (std::size_t i = 0; i < 50; ++i) {
    const auto& s = f.sequences[i];
    DataTuple t;
    t.perturbation = random_perturb(s, 1 + i % 3, f.vocab.size(), rng);
    ps.push_back(t.perturbation);
    t.text_hash = s.hash();
    t.label = s.label;
    t.epsilon = 0.01 * (1 + i % 20);
    t.gamma = 1.0 / (3.0 + i);
    t.achieved_shift = t.gamma + 1e-4;
    t.status = static_cast<TupleStatus>(i % 3);
    t.seed = i * 1234567;
    t.edit_distance = t.perturbation.size();
    t.similarity = 0.9 - 0.001 * i;
    tuples.push_back(t);
  }
  const std::string tp = (dir / "t.jsonl").string(), pp = (dir / "p.jsonl").string();
  write_tuples(tp, tuples, f.vocab);
  write_perturbations(pp, ps, f.vocab);
  const auto back = read_tuples(tp, f.vocab);
  REQUIRE(back.size() == tuples.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(same_tuple(back[i], tuples[i]));
  CHECK(read_perturbations(pp, f.vocab) == ps);

  const Vocabulary other = word_vocab();
  CHECK_THROWS_AS(read_tuples(tp, other), Error);

  const json j = {{"a", 1}, {"b", {1.5, 2.5}}};
  write_json_file((dir / "x.json").string(), j);
  CHECK(read_json_file((dir / "x.json").string()) == j);
}

TEST_CASE("dedupe keeps the first of each text and edit set") {
  const auto s = fake_text(3);
  DataTuple a = tuple_for(s, 0, 20, 0.1), b = tuple_for(s, 0, 20, 0.2), c = tuple_for(s, 1, 20, 0.3);
  const std::vector<DataTuple> all = {a, b, c, a};
  const auto out = dedupe_tuples(all);
  REQUIRE(out.size() == 2);
  CHECK(out[0].epsilon == 0.1);
  CHECK(out[1].epsilon == 0.3);
}
