#include "perturbscore/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

#include "parallel.hpp"
#include "perturbscore/epsilon_search.hpp"
#include "perturbscore/error.hpp"
#include "perturbscore/hash.hpp"
#include "perturbscore/perturbgen.hpp"
#include "perturbscore/scorer.hpp"
#include "perturbscore/stats.hpp"
#include "perturbscore/tuplestore.hpp"

namespace pscore {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------------------------------------------- config

const char* config_type_name(ConfigType t) {
  switch (t) {
    case ConfigType::kInt: return "int";
    case ConfigType::kFloat: return "float";
    case ConfigType::kString: return "string";
    case ConfigType::kBool: return "bool";
    case ConfigType::kStringList: return "list";
  }
  return "?";
}

const std::vector<ConfigKey>& config_keys() {
  using T = ConfigType;
  static const std::vector<ConfigKey> kKeys = {
      {"seed", T::kInt, nullptr, "master seed (required)"},
      {"workers", T::kInt, 1, "worker threads for perturbation and search"},
      {"out", T::kString, "run", "output directory"},
      {"quiet", T::kBool, false, "suppress progress lines on stderr"},
      {"corpus", T::kString, "", "TSV corpus (label<TAB>text); default <out>/corpus.tsv"},
      {"synth_texts", T::kInt, 2000, "synthetic corpus size"},
      {"synth_vocab", T::kInt, 2000, "synthetic vocabulary size"},
      {"synth_classes", T::kInt, 2, "synthetic class count"},
      {"synth_min_len", T::kInt, 12, "shortest synthetic text"},
      {"synth_max_len", T::kInt, 30, "longest synthetic text"},
      {"synth_strong", T::kInt, 40, "strong keywords per class"},
      {"synth_weak", T::kInt, 150, "weak keywords per class"},
      {"synth_strong_min", T::kInt, 2, "fewest strong keywords in a text"},
      {"synth_strong_max", T::kInt, 4, "most strong keywords in a text"},
      {"synth_weak_rate", T::kFloat, 0.3, "probability a filler slot holds a weak keyword"},
      {"synth_weak_bias", T::kFloat, 0.75, "probability a weak keyword belongs to the text's class"},
      {"vocab_size", T::kInt, 5000, "vocabulary cap including reserved tokens"},
      {"max_len", T::kInt, 64, "classifier input length cap"},
      {"embed_dim", T::kInt, 16, "classifier embedding width"},
      {"hidden_dim", T::kInt, 16, "classifier hidden width"},
      {"init_scale", T::kFloat, 1.0, "classifier embedding init scale"},
      {"epochs", T::kInt, 20, "most classifier epochs"},
      {"learning_rate", T::kFloat, 0.1, "classifier SGD step"},
      {"batch_size", T::kInt, 16, "classifier minibatch"},
      {"clip_norm", T::kFloat, 5.0, "global gradient clip"},
      {"test_fraction", T::kFloat, 0.2, "classifier held-out fraction"},
      {"stop_accuracy", T::kFloat, 0.96, "end classifier training once validation accuracy reaches this (0 = off)"},
      {"validation_fraction", T::kFloat, 0.1, "share of classifier training rows used for stop_accuracy"},
      {"adv_steps", T::kInt, 5, "adversarial-training ascent steps"},
      {"adv_alpha", T::kFloat, 0.1, "adversarial-training step length"},
      {"adv_epsilon", T::kFloat, 0.1, "adversarial-training radius"},
      {"classifier", T::kString, "", "classifier model used downstream; default <out>/classifier.bin"},
      {"adv_classifier", T::kString, "", "adv-train output; default <out>/classifier_adv.bin"},
      {"method", T::kString, "random", "perturbation method: random or greedy"},
      {"perturb_texts", T::kInt, 0, "perturb only the first N texts (0 = all)"},
      {"per_text", T::kInt, 12, "random perturbations per text"},
      {"max_edits", T::kInt, 6, "largest edit count"},
      {"synonyms_k", T::kInt, 10, "greedy candidate pool per token"},
      {"perturbations", T::kString, "", "perturbation JSONL; default <out>/perturbs_<method>.jsonl"},
      {"pgd_steps", T::kInt, 15, "PGD updates per radius"},
      {"pgd_alpha", T::kFloat, 0.1, "PGD step length"},
      {"eps_interval", T::kFloat, 0.01, "radius grid spacing"},
      {"band", T::kFloat, 0.005, "acceptance half-band"},
      {"eps_max", T::kFloat, 1.0, "largest radius"},
      {"curve_texts", T::kInt, 50, "texts sampled for the shift-vs-radius curve"},
      {"tuples", T::kString, "", "find-epsilon output; default <out>/tuples_<method>.jsonl"},
      {"train_tuples", T::kStringList, json::array(), "tuple files for train-scorer; default the method's tuples"},
      {"test_tuples", T::kStringList, json::array(), "tuple files for evaluate; default <out>/scorer_test.jsonl"},
      {"split_ratio", T::kFloat, 0.8, "scorer train share, by text"},
      {"scorer", T::kString, "", "scorer model; default <out>/scorer.bin"},
      {"scorer_embed_dim", T::kInt, 16, "scorer embedding width"},
      {"scorer_hidden_dim", T::kInt, 64, "scorer hidden width"},
      {"scorer_max_len", T::kInt, 96, "scorer input length cap"},
      {"scorer_init_scale", T::kFloat, 0.5, "scorer embedding init scale"},
      {"scorer_epochs", T::kInt, 100, "scorer epochs"},
      {"scorer_learning_rate", T::kFloat, 0.3, "scorer SGD step"},
      {"scorer_batch_size", T::kInt, 16, "scorer minibatch"},
      {"scorer_validation_fraction", T::kFloat, 0.1, "scorer validation share"},
      {"scorer_restore_best", T::kBool, true, "keep the scorer epoch with the lowest validation loss"},
      {"scorer_init", T::kString, "cooccurrence",
       "scorer token table start: random, cooccurrence (corpus PPMI factors) or classifier (copied embeddings)"},
      {"report_tag", T::kString, "", "suffix for evaluate outputs"},
  };
  return kKeys;
}

namespace {

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

bool type_ok(const ConfigKey& k, const json& v) {
  switch (k.type) {
    case ConfigType::kInt: return v.is_number_integer();
    case ConfigType::kFloat: return v.is_number();
    case ConfigType::kString: return v.is_string();
    case ConfigType::kBool: return v.is_boolean();
    case ConfigType::kStringList:
      return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_string(); });
  }
  return false;
}

// Input files each verb requires before it may run.
std::vector<std::string> required_inputs(const std::string& verb, const RunConfig& c) {
  const std::string method = c.s("method");
  if (verb == "train-classifier" || verb == "adv-train") return {c.path_or("corpus", "corpus.tsv")};
  if (verb == "gen-perturbs") return {c.path_or("corpus", "corpus.tsv"), c.path_or("classifier", "classifier.bin")};
  if (verb == "find-epsilon") {
    return {c.path_or("corpus", "corpus.tsv"), c.path_or("classifier", "classifier.bin"),
            c.path_or("perturbations", "perturbs_" + method + ".jsonl")};
  }
  if (verb == "train-scorer") {
    auto files = c.list("train_tuples");
    if (files.empty()) files.push_back(c.out_path("tuples_" + method + ".jsonl"));
    files.push_back(c.path_or("corpus", "corpus.tsv"));
    files.push_back(c.path_or("classifier", "classifier.bin"));
    return files;
  }
  if (verb == "evaluate") {
    auto files = c.list("test_tuples");
    if (files.empty()) files.push_back(c.out_path("scorer_test.jsonl"));
    files.push_back(c.path_or("corpus", "corpus.tsv"));
    files.push_back(c.path_or("scorer", "scorer.bin"));
    return files;
  }
  if (verb == "pipeline" && !c.s("corpus").empty()) return {c.s("corpus")};
  return {};
}

}  // namespace

RunConfig RunConfig::from_json(const json& overrides, const std::string& verb) {
  std::vector<std::string> problems;
  if (!overrides.is_object()) throw Error(ErrorCode::kConfig, "config: expected a JSON object");
  RunConfig c;
  c.values_ = json::object();
  for (const auto& k : config_keys()) c.values_[k.name] = k.default_value;
  for (const auto& [name, v] : overrides.items()) {
    const ConfigKey* k = find_key(name);
    if (k == nullptr) {
      problems.push_back(name + ": unknown key");
    } else if (!type_ok(*k, v)) {
      problems.push_back(name + ": expected " + config_type_name(k->type) + ", got " + v.dump());
    } else {
      c.values_[name] = v;
    }
  }
  if (c.values_["seed"].is_null()) problems.push_back("seed: required");

  auto positive = [&](const char* key) {
    const json& v = c.values_[key];
    if (v.is_number() && !(v.get<double>() > 0)) problems.push_back(std::string(key) + ": must be > 0");
  };
  auto non_negative = [&](const char* key) {
    const json& v = c.values_[key];
    if (v.is_number() && v.get<double>() < 0) problems.push_back(std::string(key) + ": must be >= 0");
  };
  auto unit_open = [&](const char* key) {
    const json& v = c.values_[key];
    if (v.is_number() && !(v.get<double>() > 0.0 && v.get<double>() < 1.0)) {
      problems.push_back(std::string(key) + ": must be in (0,1)");
    }
  };
  for (const char* key : {"workers", "synth_texts", "synth_vocab", "synth_min_len", "synth_max_len", "synth_strong",
                          "vocab_size", "max_len", "embed_dim", "hidden_dim", "init_scale", "learning_rate",
                          "batch_size", "adv_steps", "adv_alpha", "per_text", "max_edits", "synonyms_k", "pgd_steps",
                          "pgd_alpha", "eps_interval", "band", "eps_max", "scorer_embed_dim", "scorer_hidden_dim",
                          "scorer_max_len", "scorer_init_scale", "scorer_learning_rate", "scorer_batch_size"}) {
    positive(key);
  }
  for (const char* key : {"seed", "epochs", "scorer_epochs", "adv_epsilon", "clip_norm", "perturb_texts",
                          "curve_texts", "synth_weak", "synth_strong_min"}) {
    non_negative(key);
  }
  for (const char* key : {"synth_weak_bias", "split_ratio", "validation_fraction"}) unit_open(key);
  for (const char* key : {"synth_weak_rate", "test_fraction", "scorer_validation_fraction", "stop_accuracy"}) {
    const json& v = c.values_[key];
    if (v.is_number() && !(v.get<double>() >= 0.0 && v.get<double>() < 1.0)) {
      problems.push_back(std::string(key) + ": must be in [0,1)");
    }
  }
  if (c.values_["synth_classes"].is_number() && c.values_["synth_classes"].get<double>() < 2) {
    problems.push_back("synth_classes: must be >= 2");
  }
  if (c.values_["synth_min_len"].is_number() && c.values_["synth_max_len"].is_number() &&
      c.values_["synth_min_len"].get<double>() > c.values_["synth_max_len"].get<double>()) {
    problems.push_back("synth_min_len: must not exceed synth_max_len");
  }
  if (c.values_["synth_strong_min"].is_number() && c.values_["synth_strong_max"].is_number() &&
      c.values_["synth_strong_min"].get<double>() > c.values_["synth_strong_max"].get<double>()) {
    problems.push_back("synth_strong_min: must not exceed synth_strong_max");
  }
  if (c.values_["eps_interval"].is_number() && c.values_["eps_max"].is_number() &&
      c.values_["eps_interval"].get<double>() >= c.values_["eps_max"].get<double>()) {
    problems.push_back("eps_interval: must be smaller than eps_max");
  }
  const json& method = c.values_["method"];
  if (method.is_string() && method != "random" && method != "greedy") {
    problems.push_back("method: must be 'random' or 'greedy'");
  }
  const json& init = c.values_["scorer_init"];
  if (init.is_string() && init != "random" && init != "cooccurrence" && init != "classifier") {
    problems.push_back("scorer_init: must be 'random', 'cooccurrence' or 'classifier'");
  }

  const auto all_verbs = verbs();
  if (std::find(all_verbs.begin(), all_verbs.end(), verb) == all_verbs.end()) {
    problems.push_back("verb: unknown verb '" + verb + "'");
  } else if (problems.empty()) {
    for (const auto& path : required_inputs(verb, c)) {
      if (!fs::exists(path)) {
        // Name the key that produced the path so the fix is obvious.
        std::string key = "input";
        for (const char* k : {"corpus", "classifier", "perturbations", "scorer"})
          if (c.path_or(k, "") == path || c.s(k) == path) key = k;
        for (const char* k : {"train_tuples", "test_tuples"}) {
          const auto l = c.list(k);
          if (std::find(l.begin(), l.end(), path) != l.end()) key = k;
        }
        problems.push_back(key + ": file '" + path + "' does not exist");
      }
    }
  }
  if (!problems.empty()) {
    std::string msg = "invalid configuration (" + std::to_string(problems.size()) + " problem" +
                      (problems.size() == 1 ? "" : "s") + "):";
    for (const auto& p : problems) msg += "\n  " + p;
    throw Error(ErrorCode::kConfig, msg);
  }
  return c;
}

std::int64_t RunConfig::i(const std::string& key) const { return values_.at(key).get<std::int64_t>(); }
std::size_t RunConfig::u(const std::string& key) const { return values_.at(key).get<std::size_t>(); }
double RunConfig::f(const std::string& key) const { return values_.at(key).get<double>(); }
const std::string& RunConfig::s(const std::string& key) const { return values_.at(key).get_ref<const std::string&>(); }
bool RunConfig::b(const std::string& key) const { return values_.at(key).get<bool>(); }
std::vector<std::string> RunConfig::list(const std::string& key) const {
  return values_.at(key).get<std::vector<std::string>>();
}

std::string RunConfig::out_path(const std::string& file) const { return (fs::path(s("out")) / file).string(); }

std::string RunConfig::path_or(const std::string& key, const std::string& file) const {
  const std::string& v = s(key);
  return v.empty() ? out_path(file) : v;
}

std::string RunConfig::hash() const { return sha256_hex(values_.dump()); }

// ---------------------------------------------------------------- synthetic

std::vector<LabeledText> synth_corpus(const SynthConfig& c) {
  const std::size_t keywords = c.num_classes * (c.strong_per_class + c.weak_per_class);
  if (c.num_classes < 2 || c.strong_per_class == 0 || c.vocab <= keywords || c.min_len == 0 ||
      c.min_len > c.max_len || c.strong_min == 0 || c.strong_min > c.strong_max || c.strong_max > c.min_len) {
    throw Error(ErrorCode::kConfig, "synth: inconsistent corpus settings");
  }
  std::mt19937_64 rng(c.seed);
  static const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"};
  static const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
  std::set<std::string> seen;
  std::vector<std::string> words;
  std::uniform_int_distribution<int> syllables(2, 4), onset(0, 15), vowel(0, 6);
  while (words.size() < c.vocab) {
    std::string w;
    for (int k = syllables(rng); k > 0; --k) w += std::string(kOnsets[onset(rng)]) + kVowels[vowel(rng)];
    if (seen.insert(w).second) words.push_back(std::move(w));
  }
  // words = [strong(class 0) .. strong(class C-1) | weak(class 0) .. | filler]
  auto strong = [&](std::size_t cls, std::size_t j) -> const std::string& {
    return words[cls * c.strong_per_class + j];
  };
  const std::size_t weak_base = c.num_classes * c.strong_per_class;
  auto weak = [&](std::size_t cls, std::size_t j) -> const std::string& {
    return words[weak_base + cls * c.weak_per_class + j];
  };
  const std::size_t filler_base = weak_base + c.num_classes * c.weak_per_class;
  const std::size_t filler_count = c.vocab - filler_base;

  std::uniform_int_distribution<std::size_t> len_dist(c.min_len, c.max_len), strong_count(c.strong_min, c.strong_max);
  std::uniform_int_distribution<std::size_t> pick_strong(0, c.strong_per_class - 1);
  std::uniform_int_distribution<std::size_t> pick_filler(0, filler_count - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<LabeledText> corpus;
  corpus.reserve(c.texts);
  for (std::size_t t = 0; t < c.texts; ++t) {
    const auto label = static_cast<ClassId>(t % c.num_classes);
    const std::size_t len = len_dist(rng);
    std::vector<std::string> tokens(len);
    for (auto& tok : tokens) {
      if (c.weak_per_class > 0 && unit(rng) < c.weak_rate) {
        std::size_t cls = label;
        if (unit(rng) >= c.weak_bias) {
          cls = std::uniform_int_distribution<std::size_t>(0, c.num_classes - 2)(rng);
          if (cls >= label) ++cls;
        }
        tok = weak(cls, std::uniform_int_distribution<std::size_t>(0, c.weak_per_class - 1)(rng));
      } else {
        tok = words[filler_base + pick_filler(rng)];
      }
    }
    std::vector<std::size_t> slots(len);
    for (std::size_t i = 0; i < len; ++i) slots[i] = i;
    std::shuffle(slots.begin(), slots.end(), rng);
    const std::size_t n_strong = strong_count(rng);
    for (std::size_t k = 0; k < n_strong; ++k) tokens[slots[k]] = strong(label, pick_strong(rng));
    std::string text;
    for (const auto& tok : tokens) text += (text.empty() ? "" : " ") + tok;
    corpus.push_back({label, std::move(text)});
  }
  return corpus;
}

// ------------------------------------------------------------------- verbs

std::vector<std::string> verbs() {
  return {"synth-corpus", "gen-perturbs",  "train-classifier", "adv-train",
          "find-epsilon", "train-scorer",  "evaluate",         "pipeline"};
}

namespace {

class Context {
 public:
  Context(std::string verb, RunConfig config) : verb_(std::move(verb)), config_(std::move(config)) {
    fs::create_directories(config_.s("out"));
  }

  const RunConfig& config() const { return config_; }

  void log(const std::string& msg) const {
    if (!config_.b("quiet")) std::fprintf(stderr, "[%s] %s\n", verb_.c_str(), msg.c_str());
  }
  void input(const std::string& path) { inputs_[path] = sha256_file(path); }
  void output(const std::string& path) { outputs_[path] = sha256_file(path); }
  json& metrics() { return metrics_; }
  json& notes() { return notes_; }

  // Writes <primary>.manifest.json and returns the summary.
  json finish(const std::string& primary) {
    json manifest = {{"verb", verb_},
                     {"seed", config_.seed()},
                     {"config_hash", config_.hash()},
                     {"config", config_.values()},
                     {"inputs", inputs_},
                     {"outputs", outputs_},
                     {"metrics", metrics_}};
    if (!notes_.is_null()) manifest["notes"] = notes_;
    const std::string path = primary + ".manifest.json";
    write_json_file(path, manifest);
    return {{"verb", verb_}, {"manifest", path}, {"outputs", outputs_}, {"metrics", metrics_}};
  }

 private:
  std::string verb_;
  RunConfig config_;
  std::map<std::string, std::string> inputs_, outputs_;
  json metrics_ = json::object();
  json notes_;
};

struct Corpus {
  std::vector<TokenSequence> sequences;
  std::unordered_map<std::uint64_t, TokenSequence> by_hash;
};

Corpus load_sequences(Context& ctx, const Vocabulary& vocab, std::size_t max_len) {
  const std::string path = ctx.config().path_or("corpus", "corpus.tsv");
  ctx.input(path);
  Corpus c;
  const auto texts = read_corpus_tsv(path);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    try {
      c.sequences.push_back(tokenize(texts[i].text, vocab, max_len, texts[i].label));
    } catch (const Error& e) {
      throw Error(e.code(), path + ": text " + std::to_string(i + 1) + ": " + e.what());
    }
    c.by_hash.emplace(c.sequences.back().hash(), c.sequences.back());
  }
  return c;
}

ClassifierModel load_model(Context& ctx, const std::string& key, const std::string& file) {
  const std::string path = ctx.config().path_or(key, file);
  ctx.input(path);
  return load_classifier(path);
}

json cmd_synth_corpus(Context& ctx) {
  const RunConfig& c = ctx.config();
  SynthConfig sc;
  sc.texts = c.u("synth_texts");
  sc.vocab = c.u("synth_vocab");
  sc.num_classes = c.u("synth_classes");
  sc.min_len = c.u("synth_min_len");
  sc.max_len = c.u("synth_max_len");
  sc.strong_per_class = c.u("synth_strong");
  sc.weak_per_class = c.u("synth_weak");
  sc.strong_min = c.u("synth_strong_min");
  sc.strong_max = c.u("synth_strong_max");
  sc.weak_rate = c.f("synth_weak_rate");
  sc.weak_bias = c.f("synth_weak_bias");
  sc.seed = c.seed();
  const auto corpus = synth_corpus(sc);
  const std::string path = c.path_or("corpus", "corpus.tsv");
  write_corpus_tsv(path, corpus);
  ctx.output(path);
  ctx.metrics()["texts"] = corpus.size();
  ctx.log("wrote " + std::to_string(corpus.size()) + " texts to " + path);
  return ctx.finish(path);
}

json cmd_train(Context& ctx, bool adversarial) {
  const RunConfig& c = ctx.config();
  const std::string corpus_path = c.path_or("corpus", "corpus.tsv");
  ctx.input(corpus_path);
  const auto texts = read_corpus_tsv(corpus_path);
  std::vector<std::string> raw;
  std::size_t classes = 0;
  for (const auto& t : texts) {
    raw.push_back(t.text);
    classes = std::max<std::size_t>(classes, t.label + 1);
  }
  Vocabulary vocab = Vocabulary::build(raw, c.u("vocab_size"));
  std::vector<TokenSequence> seqs;
  for (const auto& t : texts) seqs.push_back(tokenize(t.text, vocab, c.u("max_len"), t.label));

  ClassifierConfig mc;
  mc.embed_dim = c.u("embed_dim");
  mc.hidden_dim = c.u("hidden_dim");
  mc.num_classes = std::max<std::size_t>(2, classes);
  mc.max_len = c.u("max_len");
  mc.init_scale = c.f("init_scale");
  TrainConfig tc;
  tc.epochs = c.u("epochs");
  tc.learning_rate = c.f("learning_rate");
  tc.batch_size = c.u("batch_size");
  tc.clip_norm = c.f("clip_norm");
  tc.test_fraction = c.f("test_fraction");
  tc.stop_accuracy = c.f("stop_accuracy");
  tc.validation_fraction = c.f("validation_fraction");
  tc.seed = c.seed();

  TrainResult r;
  if (adversarial) {
    AdvTrainConfig ac;
    ac.steps = c.u("adv_steps");
    ac.alpha = c.f("adv_alpha");
    ac.epsilon = c.f("adv_epsilon");
    r = adv_train_classifier(std::move(vocab), seqs, mc, tc, ac);
  } else {
    r = train_classifier(std::move(vocab), seqs, mc, tc);
  }
  json log = json::array();
  for (const auto& e : r.log) {
    log.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"test_accuracy", e.test_accuracy},
                   {"validation_accuracy", e.validation_accuracy},
                   {"mean_delta_norm", e.mean_delta_norm},
                   {"max_delta_norm", e.max_delta_norm}});
    ctx.log("epoch " + std::to_string(e.epoch) + " loss " + std::to_string(e.train_loss) + " test acc " +
            std::to_string(e.test_accuracy));
  }
  const std::string path = adversarial ? c.path_or("adv_classifier", "classifier_adv.bin")
                                       : c.path_or("classifier", "classifier.bin");
  save_classifier(r.model, path);
  ctx.output(path);
  ctx.metrics()["test_accuracy"] = r.test_accuracy;
  ctx.metrics()["epochs"] = log;
  ctx.metrics()["model_id"] = r.model.id();
  ctx.metrics()["vocab_size"] = r.model.vocab.size();
  return ctx.finish(path);
}

std::size_t perturb_count(const RunConfig& c, std::size_t available) {
  const std::size_t limit = c.u("perturb_texts");
  return limit == 0 ? available : std::min(limit, available);
}

json cmd_gen_perturbs(Context& ctx) {
  const RunConfig& c = ctx.config();
  const ClassifierModel model = load_model(ctx, "classifier", "classifier.bin");
  const Corpus corpus = load_sequences(ctx, model.vocab, model.config.max_len);
  const PerturbMethod method = parse_method(c.s("method"));
  const std::size_t n = perturb_count(c, corpus.sequences.size());
  const std::size_t max_edits = c.u("max_edits"), per_text = c.u("per_text");

  SynonymTable synonyms;
  if (method == PerturbMethod::kGreedy) synonyms = build_synonym_table(model, c.u("synonyms_k"));
  const std::size_t workers = std::max<std::size_t>(1, std::min(c.workers(), n));
  std::vector<ClassifierSession> sessions;
  for (std::size_t w = 0; w < workers; ++w) sessions.emplace_back(model);

  std::vector<std::vector<Perturbation>> per(n);
  detail::parallel_for(n, workers, [&](std::size_t i, std::size_t w) {
    const TokenSequence& s = corpus.sequences[i];
    if (method == PerturbMethod::kGreedy) {
      per[i] = greedy_perturbs(s, sessions[w], synonyms, max_edits);
      return;
    }
    Rng rng(Fnv1a().u64(c.seed()).u64(i).u64(s.hash()).value());
    std::uniform_int_distribution<std::size_t> edits(1, std::min(max_edits, s.size()));
    for (std::size_t k = 0; k < per_text; ++k) per[i].push_back(random_perturb(s, edits(rng), model.vocab.size(), rng));
  });

  // Drop duplicate edit sets of one text, keeping first occurrences.
  std::vector<Perturbation> all;
  std::set<std::pair<std::uint64_t, std::vector<std::tuple<std::size_t, TokenId, TokenId>>>> seen;
  for (auto& ps : per)
    for (auto& p : ps) {
      std::vector<std::tuple<std::size_t, TokenId, TokenId>> key;
      for (const Edit& e : p.edits) key.emplace_back(e.position, e.original, e.replacement);
      if (seen.emplace(p.parent_hash, std::move(key)).second) all.push_back(std::move(p));
    }
  const std::string path = c.path_or("perturbations", "perturbs_" + c.s("method") + ".jsonl");
  write_perturbations(path, all, model.vocab);
  ctx.output(path);
  ctx.metrics()["texts"] = n;
  ctx.metrics()["perturbations"] = all.size();
  ctx.metrics()["per_text_mean"] = n == 0 ? 0.0 : static_cast<double>(all.size()) / static_cast<double>(n);
  ctx.log("wrote " + std::to_string(all.size()) + " " + c.s("method") + " perturbations for " + std::to_string(n) +
          " texts");
  return ctx.finish(path);
}

SearchConfig search_config(const RunConfig& c) {
  SearchConfig sc;
  sc.steps = c.u("pgd_steps");
  sc.alpha = c.f("pgd_alpha");
  sc.interval = c.f("eps_interval");
  sc.band = c.f("band");
  sc.eps_max = c.f("eps_max");
  sc.seed = c.seed();
  return sc;
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out << body;
}

json cmd_find_epsilon(Context& ctx) {
  const RunConfig& c = ctx.config();
  const ClassifierModel model = load_model(ctx, "classifier", "classifier.bin");
  const Corpus corpus = load_sequences(ctx, model.vocab, model.config.max_len);
  const std::string method = c.s("method");
  const std::string ppath = c.path_or("perturbations", "perturbs_" + method + ".jsonl");
  ctx.input(ppath);
  const auto perturbs = read_perturbations(ppath, model.vocab);
  const SearchConfig sc = search_config(c);
  sc.validate();

  const std::size_t workers = std::max<std::size_t>(1, std::min(c.workers(), perturbs.size()));
  std::vector<ClassifierSession> sessions;
  for (std::size_t w = 0; w < workers; ++w) sessions.emplace_back(model);
  std::vector<DataTuple> tuples(perturbs.size());
  const auto start = std::chrono::steady_clock::now();
  detail::parallel_for(perturbs.size(), workers, [&](std::size_t i, std::size_t w) {
    auto it = corpus.by_hash.find(perturbs[i].parent_hash);
    if (it == corpus.by_hash.end()) {
      throw Error(ErrorCode::kMismatch, ppath + ": record " + std::to_string(i + 1) + ": text " +
                                            hex64(perturbs[i].parent_hash) + " is not in the corpus");
    }
    tuples[i] = find_epsilon(sessions[w], it->second, perturbs[i], sc);
    tuples[i].similarity = similarity_proxy(model, it->second, perturbs[i]);
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const std::string tpath = c.path_or("tuples", "tuples_" + method + ".jsonl");
  write_tuples(tpath, tuples, model.vocab);
  ctx.output(tpath);

  const EpsilonHistogram hist = epsilon_histogram(tuples, sc.eps_max);
  const std::string stem = tpath.substr(0, tpath.rfind('.'));
  write_text(stem + ".histogram.txt", hist.to_text(method));
  write_text(stem + ".histogram.csv", hist.to_csv(method));
  ctx.output(stem + ".histogram.txt");
  ctx.output(stem + ".histogram.csv");

  // Shift curves: mean discrete shift per edit count, and mean maximized
  // continuous shift per radius over a sample of texts.
  std::vector<double> counts, gammas;
  for (const auto& t : tuples) {
    counts.push_back(static_cast<double>(t.edit_distance));
    gammas.push_back(t.gamma);
  }
  std::ostringstream curves;
  curves << "curve,x,mean_shift,count\n";
  for (const auto& p : grouped_mean(counts, gammas)) curves << "discrete," << p.x << ',' << p.mean << ',' << p.count << '\n';
  std::vector<TokenSequence> sample(corpus.sequences.begin(),
                                    corpus.sequences.begin() +
                                        static_cast<std::ptrdiff_t>(std::min(c.u("curve_texts"), corpus.sequences.size())));
  std::vector<double> radii;
  for (double r = 0.05; r <= sc.eps_max + 1e-9; r += 0.05) radii.push_back(r);
  const auto curve = shift_curve(sessions[0], sample, radii, sc);
  for (std::size_t i = 0; i < radii.size(); ++i) curves << "continuous," << radii[i] << ',' << curve[i] << ',' << sample.size() << '\n';
  write_text(stem + ".curves.csv", curves.str());
  ctx.output(stem + ".curves.csv");

  std::size_t accepted = 0, overshoot = 0, exhausted = 0;
  double eps_sum = 0.0;
  for (const auto& t : tuples) {
    if (t.accepted()) {
      ++accepted;
      eps_sum += t.epsilon;
    } else if (t.status == TupleStatus::kDiscardedOvershoot) {
      ++overshoot;
    } else {
      ++exhausted;
    }
  }
  auto& m = ctx.metrics();
  m["inputs"] = tuples.size();
  m["accepted"] = accepted;
  m["discarded_overshoot"] = overshoot;
  m["discarded_exhausted"] = exhausted;
  m["discard_fraction"] = tuples.empty() ? 0.0 : static_cast<double>(overshoot + exhausted) / static_cast<double>(tuples.size());
  m["mean_accepted_epsilon"] = accepted == 0 ? 0.0 : eps_sum / static_cast<double>(accepted);
  m["search_seconds"] = seconds;
  ctx.log(hist.to_text(method));
  ctx.log("accepted " + std::to_string(accepted) + " / " + std::to_string(tuples.size()) + " in " +
          std::to_string(seconds) + " s");
  return ctx.finish(tpath);
}

std::vector<DataTuple> read_tuple_files(Context& ctx, const std::vector<std::string>& paths, const Vocabulary& vocab) {
  std::vector<DataTuple> all;
  for (const auto& p : paths) {
    ctx.input(p);
    auto part = read_tuples(p, vocab);
    all.insert(all.end(), part.begin(), part.end());
  }
  return dedupe_tuples(all);
}

ScorerConfig scorer_config(const RunConfig& c) {
  ScorerConfig sc;
  sc.embed_dim = c.u("scorer_embed_dim");
  sc.hidden_dim = c.u("scorer_hidden_dim");
  sc.max_len = c.u("scorer_max_len");
  sc.eps_max = c.f("eps_max");
  sc.init_scale = c.f("scorer_init_scale");
  return sc;
}

json cmd_train_scorer(Context& ctx) {
  const RunConfig& c = ctx.config();
  const ClassifierModel model = load_model(ctx, "classifier", "classifier.bin");
  const Corpus corpus = load_sequences(ctx, model.vocab, model.config.max_len);
  auto files = c.list("train_tuples");
  if (files.empty()) files.push_back(c.out_path("tuples_" + c.s("method") + ".jsonl"));
  const auto tuples = read_tuple_files(ctx, files, model.vocab);
  const TupleSplit split = split_dataset(tuples, c.f("split_ratio"), c.seed());
  write_tuples(c.out_path("scorer_train.jsonl"), split.train, model.vocab);
  write_tuples(c.out_path("scorer_test.jsonl"), split.test, model.vocab);
  ctx.output(c.out_path("scorer_train.jsonl"));
  ctx.output(c.out_path("scorer_test.jsonl"));

  const ScorerConfig mc = scorer_config(c);
  const ScorerDataset train = build_scorer_dataset(split.train, corpus.by_hash, model.vocab, mc.max_len, "train");
  ScorerTrainConfig tc;
  tc.epochs = c.u("scorer_epochs");
  tc.learning_rate = c.f("scorer_learning_rate");
  tc.batch_size = c.u("scorer_batch_size");
  tc.clip_norm = c.f("clip_norm");
  tc.validation_fraction = c.f("scorer_validation_fraction");
  tc.restore_best = c.b("scorer_restore_best");
  tc.seed = c.seed();
  const std::string& init = c.s("scorer_init");
  if (init == "classifier") {
    if (model.config.embed_dim != mc.embed_dim) {
      throw Error(ErrorCode::kConfig, "scorer_init=classifier needs scorer_embed_dim == embed_dim (" +
                                          std::to_string(mc.embed_dim) + " vs " +
                                          std::to_string(model.config.embed_dim) + ")");
    }
    tc.initial_embedding = model.params.embedding;
  } else if (init == "cooccurrence") {
    tc.initial_embedding = cooccurrence_embedding(model.vocab, corpus.sequences, mc.embed_dim, mc.init_scale);
  }
  const auto r = train_scorer(model.vocab, train.examples, mc, tc);
  json log = json::array();
  for (const auto& e : r.log) {
    log.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"validation_loss", e.validation_loss}});
    ctx.log("epoch " + std::to_string(e.epoch) + " train mse " + std::to_string(e.train_loss) + " validation mse " +
            std::to_string(e.validation_loss));
  }
  const std::string path = c.path_or("scorer", "scorer.bin");
  save_scorer(r.model, path);
  ctx.output(path);
  auto& m = ctx.metrics();
  m["train_tuples"] = split.train.size();
  m["test_tuples"] = split.test.size();
  m["train_examples"] = train.examples.size();
  m["rejected_for_length"] = train.rejected;
  m["epochs"] = log;
  m["best_epoch"] = r.best_epoch;
  m["model_id"] = r.model.id();
  ctx.notes() = {{"loss", "mean squared error on raw epsilon"},
                 {"target_normalization", "none; output is eps_max * sigmoid"},
                 {"token_table_init", init},
                 {"split", "by parent text"}};
  return ctx.finish(path);
}

json cmd_evaluate(Context& ctx) {
  const RunConfig& c = ctx.config();
  const std::string spath = c.path_or("scorer", "scorer.bin");
  ctx.input(spath);
  const ScorerModel model = load_scorer(spath);
  const Corpus corpus = load_sequences(ctx, model.vocab, c.u("max_len"));
  auto files = c.list("test_tuples");
  if (files.empty()) files.push_back(c.out_path("scorer_test.jsonl"));
  const auto tuples = read_tuple_files(ctx, files, model.vocab);
  const ScorerDataset test = build_scorer_dataset(tuples, corpus.by_hash, model.vocab, model.config.max_len, "test");
  const auto preds = predict_all(model, test.examples, c.workers());
  CorrelationReport report = evaluate_predictions(test.examples, preds);
  report.model = model.id();
  std::string dataset;
  for (const auto& f : files) dataset += (dataset.empty() ? "" : "+") + fs::path(f).stem().string();
  report.dataset = dataset;
  std::set<std::string> methods;
  for (const auto& ex : test.examples) methods.insert(method_name(ex.method));
  for (const auto& mname : methods) report.method += (report.method.empty() ? "" : "+") + mname;

  const std::string tag = c.s("report_tag").empty() ? "" : "_" + c.s("report_tag");
  const std::string rtxt = c.out_path("report" + tag + ".txt"), rcsv = c.out_path("report" + tag + ".csv");
  const std::string dump = c.out_path("predictions" + tag + ".csv");
  write_text(rtxt, report.to_text());
  write_text(rcsv, report.to_csv());
  write_prediction_dump(dump, test.examples, preds);
  for (const auto& p : {rtxt, rcsv, dump}) ctx.output(p);
  auto& m = ctx.metrics();
  m["samples"] = report.samples;
  for (const auto& row : report.rows) m[row.measure] = {{"kendall", row.kendall}, {"spearman", row.spearman}, {"pearson", row.pearson}};
  m["mse"] = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) s += (preds[i] - test.examples[i].target) * (preds[i] - test.examples[i].target);
    return preds.empty() ? 0.0 : s / static_cast<double>(preds.size());
  }();
  ctx.log("\n" + report.to_text());
  return ctx.finish(rtxt);
}

json dispatch(const std::string& verb, const json& overrides);

json cmd_pipeline(Context& ctx, const json& overrides) {
  const RunConfig& c = ctx.config();
  json base = overrides;
  base.erase("method");
  json steps = json::array();
  auto step = [&](const std::string& verb, json extra = json::object()) {
    json cfg = base;
    cfg.update(extra);
    json r = dispatch(verb, cfg);
    steps.push_back(r);
    return r;
  };
  if (c.s("corpus").empty()) step("synth-corpus");
  const json train = step("train-classifier");
  std::vector<std::string> tuple_files;
  json per_method = json::object();
  for (const char* method : {"random", "greedy"}) {
    step("gen-perturbs", {{"method", method}});
    const json fe = step("find-epsilon", {{"method", method}});
    tuple_files.push_back(c.out_path(std::string("tuples_") + method + ".jsonl"));
    per_method[method] = fe["metrics"];
  }
  step("train-scorer", {{"train_tuples", tuple_files}});
  const json eval = step("evaluate");
  ctx.metrics()["classifier_test_accuracy"] = train["metrics"]["test_accuracy"];
  ctx.metrics()["search"] = per_method;
  ctx.metrics()["evaluation"] = eval["metrics"];
  ctx.metrics()["steps"] = steps.size();
  const std::string summary = c.out_path("pipeline.json");
  write_json_file(summary, {{"steps", steps}});
  ctx.output(summary);
  return ctx.finish(summary);
}

json dispatch(const std::string& verb, const json& overrides) {
  Context ctx(verb, RunConfig::from_json(overrides, verb));
  if (verb == "synth-corpus") return cmd_synth_corpus(ctx);
  if (verb == "train-classifier") return cmd_train(ctx, false);
  if (verb == "adv-train") return cmd_train(ctx, true);
  if (verb == "gen-perturbs") return cmd_gen_perturbs(ctx);
  if (verb == "find-epsilon") return cmd_find_epsilon(ctx);
  if (verb == "train-scorer") return cmd_train_scorer(ctx);
  if (verb == "evaluate") return cmd_evaluate(ctx);
  return cmd_pipeline(ctx, overrides);
}

}  // namespace

json run_command(const std::string& verb, const json& config) { return dispatch(verb, config); }

}  // namespace pscore
