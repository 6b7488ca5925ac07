#include "perturbscore/perturbscore.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "json.hpp"
#include "perturbscore/epsilon_search.hpp"
#include "perturbscore/error.hpp"
#include "perturbscore/hash.hpp"
#include "perturbscore/pipeline.hpp"
#include "perturbscore/scorer.hpp"
#include "perturbscore/textmodel.hpp"
#include "perturbscore/tuplestore.hpp"

struct ps_classifier {
  pscore::ClassifierModel model;
};

struct ps_scorer {
  pscore::ScorerModel model;
};

namespace {

thread_local std::string g_last_error;

ps_status fail(ps_status status, const std::string& msg) {
  g_last_error = msg;
  return status;
}

template <typename F>
ps_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return PS_OK;
  } catch (const pscore::Error& e) {
    return fail(static_cast<ps_status>(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(PS_ERR_PARSE, e.what());
  } catch (const std::bad_alloc&) {
    return fail(PS_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(PS_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(PS_ERR_INTERNAL, "unknown exception");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw pscore::Error(pscore::ErrorCode::kInvalidArgument, what);
}

char* copy_out(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p == nullptr) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

}  // namespace

extern "C" {

const char* ps_version(void) { return "0.1.0"; }

const char* ps_last_error(void) { return g_last_error.c_str(); }

const char* ps_status_name(ps_status status) {
  switch (status) {
    case PS_OK: return "ok";
    case PS_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case PS_ERR_SHAPE: return "shape";
    case PS_ERR_NUMERIC: return "numeric";
    case PS_ERR_STATE: return "state";
    case PS_ERR_IO: return "io";
    case PS_ERR_PARSE: return "parse";
    case PS_ERR_CONFIG: return "config";
    case PS_ERR_MISMATCH: return "mismatch";
    case PS_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

void ps_string_free(char* s) { std::free(s); }

ps_status ps_classifier_load(const char* path, ps_classifier** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "ps_classifier_load: null argument");
    *out = nullptr;
    *out = new ps_classifier{pscore::load_classifier(path)};
  });
}

void ps_classifier_free(ps_classifier* model) { delete model; }

ps_status ps_classifier_num_classes(const ps_classifier* model, size_t* out) {
  return guarded([&] {
    require(model != nullptr && out != nullptr, "ps_classifier_num_classes: null argument");
    *out = model->model.num_classes();
  });
}

ps_status ps_classifier_predict(const ps_classifier* model, const char* text, double* probs, size_t capacity) {
  return guarded([&] {
    require(model != nullptr && text != nullptr && (probs != nullptr || capacity == 0),
            "ps_classifier_predict: null argument");
    const auto& m = model->model;
    const auto out = pscore::forward(m, pscore::tokenize(text, m.vocab, m.config.max_len));
    for (size_t i = 0; i < capacity && i < out.probs.size(); ++i) probs[i] = out.probs[i];
  });
}

ps_status ps_classifier_shift(const ps_classifier* model, const char* text_a, const char* text_b, double* shift) {
  return guarded([&] {
    require(model != nullptr && text_a != nullptr && text_b != nullptr && shift != nullptr,
            "ps_classifier_shift: null argument");
    const auto& m = model->model;
    const auto a = pscore::forward(m, pscore::tokenize(text_a, m.vocab, m.config.max_len));
    const auto b = pscore::forward(m, pscore::tokenize(text_b, m.vocab, m.config.max_len));
    *shift = pscore::model_output_shift(a.probs, b.probs);
  });
}

ps_status ps_find_epsilon(const ps_classifier* model, const char* text, unsigned label, const char* edits_json,
                          const char* search_json, char** result_json) {
  return guarded([&] {
    require(model != nullptr && text != nullptr && edits_json != nullptr && result_json != nullptr,
            "ps_find_epsilon: null argument");
    *result_json = nullptr;
    const auto& m = model->model;
    require(label < m.num_classes(), "ps_find_epsilon: label out of range");
    const pscore::TokenSequence s = pscore::tokenize(text, m.vocab, m.config.max_len, label);
    nlohmann::json pj = {{"text_hash", pscore::hex64(s.hash())},
                         {"method", "random"},
                         {"edits", nlohmann::json::parse(edits_json)}};
    pscore::Perturbation p = pscore::perturbation_from_json(pj, m.vocab);
    p = pscore::make_perturbation(s, p.edits, p.method);
    pscore::SearchConfig sc;
    if (search_json != nullptr) {
      const auto j = nlohmann::json::parse(search_json);
      for (const auto& [k, v] : j.items()) {
        if (k == "steps") sc.steps = v.get<std::size_t>();
        else if (k == "alpha") sc.alpha = v.get<double>();
        else if (k == "interval") sc.interval = v.get<double>();
        else if (k == "band") sc.band = v.get<double>();
        else if (k == "eps_max") sc.eps_max = v.get<double>();
        else if (k == "seed") sc.seed = v.get<std::uint64_t>();
        else throw pscore::Error(pscore::ErrorCode::kConfig, "ps_find_epsilon: unknown search key '" + k + "'");
      }
    }
    pscore::ClassifierSession session(m);
    pscore::DataTuple t = pscore::find_epsilon(session, s, p, sc);
    t.similarity = pscore::similarity_proxy(m, s, p);
    *result_json = copy_out(pscore::tuple_to_json(t, m.vocab).dump());
  });
}

ps_status ps_scorer_load(const char* path, ps_scorer** out) {
  return guarded([&] {
    require(path != nullptr && out != nullptr, "ps_scorer_load: null argument");
    *out = nullptr;
    *out = new ps_scorer{pscore::load_scorer(path)};
  });
}

void ps_scorer_free(ps_scorer* model) { delete model; }

ps_status ps_scorer_predict(const ps_scorer* model, const char* marked_text, double* epsilon) {
  return guarded([&] {
    require(model != nullptr && marked_text != nullptr && epsilon != nullptr, "ps_scorer_predict: null argument");
    const auto& m = model->model;
    const auto words = pscore::split_words(marked_text);
    require(!words.empty(), "ps_scorer_predict: empty text");
    require(words.size() <= m.config.max_len, "ps_scorer_predict: text longer than the scorer input limit");
    pscore::ScorerExample ex;
    for (const auto& w : words) ex.input.push_back(m.vocab.id(w));
    pscore::decode_scorer_input(ex.input);  // rejects malformed markers
    *epsilon = pscore::predict_epsilon(m, ex);
  });
}

ps_status ps_run_command(const char* verb, const char* config_json, char** result_json) {
  return guarded([&] {
    require(verb != nullptr && config_json != nullptr && result_json != nullptr, "ps_run_command: null argument");
    *result_json = nullptr;
    nlohmann::json cfg;
    try {
      cfg = nlohmann::json::parse(config_json);
    } catch (const nlohmann::json::exception& e) {
      throw pscore::Error(pscore::ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
    }
    *result_json = copy_out(pscore::run_command(verb, cfg).dump(2));
  });
}

ps_status ps_config_keys(char** keys_json) {
  return guarded([&] {
    require(keys_json != nullptr, "ps_config_keys: null argument");
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& k : pscore::config_keys()) {
      arr.push_back({{"name", k.name},
                     {"type", pscore::config_type_name(k.type)},
                     {"default", k.default_value},
                     {"help", k.help}});
    }
    *keys_json = copy_out(arr.dump());
  });
}

ps_status ps_verbs(char** verbs_json) {
  return guarded([&] {
    require(verbs_json != nullptr, "ps_verbs: null argument");
    *verbs_json = copy_out(nlohmann::json(pscore::verbs()).dump());
  });
}

}  // extern "C"
