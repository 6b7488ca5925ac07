#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "doctest.h"
#include "perturbscore/error.hpp"
#include "perturbscore/pipeline.hpp"
#include "perturbscore/tuplestore.hpp"
#include "support.hpp"

using namespace pscore;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string config_error(const json& cfg, const std::string& verb) {
  try {
    RunConfig::from_json(cfg, verb);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
    return e.what();
  }
  FAIL("configuration was accepted");
  return {};
}

json small_run(const fs::path& out) {
  return {{"seed", 5},
          {"out", out.string()},
          {"quiet", true},
          {"synth_texts", 160},
          {"synth_vocab", 300},
          {"synth_min_len", 8},
          {"synth_max_len", 14},
          {"synth_strong", 10},
          {"synth_weak", 30},
          {"epochs", 10},
          {"learning_rate", 0.5},
          {"stop_accuracy", 0.0},
          {"perturb_texts", 30},
          {"per_text", 3},
          {"max_edits", 3},
          {"synonyms_k", 4},
          {"eps_interval", 0.02},
          {"curve_texts", 10},
          {"scorer_embed_dim", 8},
          {"scorer_hidden_dim", 8},
          {"scorer_epochs", 3}};
}

}  // namespace

TEST_CASE("configuration validation") {
  SUBCASE("every problem is listed with a count") {
    const std::string msg =
        config_error({{"seed", 1}, {"eps_max", -1.0}, {"method", "bogus"}, {"no_such_key", 3}}, "gen-perturbs");
    CHECK(msg.find("problems") != std::string::npos);
    CHECK(msg.find("eps_max") != std::string::npos);
    CHECK(msg.find("method") != std::string::npos);
    CHECK(msg.find("no_such_key") != std::string::npos);
  }
  SUBCASE("a missing corpus names the field") {
    const auto dir = testsupport::temp_dir("cfg_corpus");
    const std::string msg = config_error({{"seed", 1}, {"out", dir.string()}, {"corpus", (dir / "none.tsv").string()}},
                                         "train-classifier");
    CHECK(msg.find("corpus") != std::string::npos);
  }
  SUBCASE("the seed is required") {
    CHECK(config_error({{"out", "x"}}, "synth-corpus").find("seed") != std::string::npos);
  }
  SUBCASE("wrong types and unknown verbs") {
    CHECK(config_error({{"seed", 1}, {"epochs", "ten"}}, "synth-corpus").find("epochs") != std::string::npos);
    CHECK(config_error({{"seed", 1}}, "dance").find("dance") != std::string::npos);
  }
  SUBCASE("defaults fill every key") {
    const auto c = RunConfig::from_json({{"seed", 3}}, "synth-corpus");
    for (const auto& k : config_keys()) CHECK(c.values().contains(k.name));
    CHECK(c.seed() == 3);
    CHECK(c.hash().size() == 64);
  }
}

TEST_CASE("synthetic corpus") {
  SynthConfig sc = testsupport::small_synth(3);
  const auto a = synth_corpus(sc);
  REQUIRE(a.size() == sc.texts);
  std::size_t ones = 0;
  for (const auto& t : a) {
    const auto words = split_words(t.text);
    CHECK(words.size() >= sc.min_len);
    CHECK(words.size() <= sc.max_len);
    ones += t.label;
  }
  CHECK(ones == sc.texts / 2);
  const auto b = synth_corpus(sc);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].text == b[i].text);
  sc.strong_min = 5;
  sc.strong_max = 3;
  CHECK_THROWS_AS(synth_corpus(sc), Error);
}

TEST_CASE("a small end-to-end run is reproducible") {
  const auto root = testsupport::temp_dir("pipeline");
  const json first = run_command("pipeline", small_run(root / "a"));
  json second_cfg = small_run(root / "b");
  second_cfg["workers"] = 2;
  run_command("pipeline", second_cfg);

  const auto& m = first["metrics"];
  CHECK(m["classifier_test_accuracy"].get<double>() > 0.8);
  for (const char* method : {"random", "greedy"}) {
    const auto& s = m["search"][method];
    CHECK(s["accepted"].get<std::size_t>() + s["discarded_overshoot"].get<std::size_t>() +
              s["discarded_exhausted"].get<std::size_t>() ==
          s["inputs"].get<std::size_t>());
  }
  CHECK(m["search"]["random"]["inputs"] == 30 * 3);
  CHECK(m["evaluation"].contains("scorer"));

  for (const char* file : {"corpus.tsv", "perturbs_random.jsonl", "perturbs_greedy.jsonl", "tuples_random.jsonl",
                           "tuples_greedy.jsonl", "scorer_train.jsonl", "scorer_test.jsonl", "predictions.csv"}) {
    CAPTURE(file);
    REQUIRE(fs::exists(root / "a" / file));
    CHECK(slurp(root / "a" / file) == slurp(root / "b" / file));
  }

  const json manifest = read_json_file((root / "a" / "tuples_random.jsonl.manifest.json").string());
  for (const char* key : {"verb", "seed", "config_hash", "config", "inputs", "outputs", "metrics"})
    CHECK(manifest.contains(key));
  CHECK(manifest["verb"] == "find-epsilon");
  CHECK(manifest["seed"] == 5);

  SUBCASE("a single verb rerun reproduces its output") {
    json cfg = small_run(root / "a");
    cfg["method"] = "greedy";
    cfg["tuples"] = (root / "a" / "again.jsonl").string();
    run_command("find-epsilon", cfg);
    CHECK(slurp(root / "a" / "again.jsonl") == slurp(root / "a" / "tuples_greedy.jsonl"));
  }
  SUBCASE("adversarial training and a cross-method evaluation") {
    json cfg = small_run(root / "a");
    cfg["adv_epsilon"] = 0.05;
    const json adv = run_command("adv-train", cfg);
    CHECK(fs::exists(root / "a" / "classifier_adv.bin"));
    cfg["scorer"] = (root / "a" / "scorer_random.bin").string();
    cfg["train_tuples"] = {(root / "a" / "tuples_random.jsonl").string()};
    run_command("train-scorer", cfg);
    cfg["test_tuples"] = {(root / "a" / "tuples_greedy.jsonl").string()};
    cfg["report_tag"] = "cross";
    const json ev = run_command("evaluate", cfg);
    CHECK(fs::exists(root / "a" / "report_cross.csv"));
    CHECK(ev["metrics"]["samples"].get<std::size_t>() > 0);
  }
}
