#ifndef PERTURBSCORE_H
#define PERTURBSCORE_H

/* C interface to the perturbscore library.
 *
 * Every function returns a ps_status. On failure the message for the calling
 * thread is available from ps_last_error() until the next call on that
 * thread. Strings returned through char** out-parameters are owned by the
 * caller and must be released with ps_string_free(). */

#include <stddef.h>

#if defined(_WIN32)
#define PS_API __declspec(dllexport)
#else
#define PS_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ps_status {
  PS_OK = 0,
  PS_ERR_INVALID_ARGUMENT = 1,
  PS_ERR_SHAPE = 2,
  PS_ERR_NUMERIC = 3,
  PS_ERR_STATE = 4,
  PS_ERR_IO = 5,
  PS_ERR_PARSE = 6,
  PS_ERR_CONFIG = 7,
  PS_ERR_MISMATCH = 8,
  PS_ERR_INTERNAL = 99
} ps_status;

typedef struct ps_classifier ps_classifier;
typedef struct ps_scorer ps_scorer;

PS_API const char* ps_version(void);
PS_API const char* ps_last_error(void);
PS_API const char* ps_status_name(ps_status status);
PS_API void ps_string_free(char* s);

/* Classifier models written by the train-classifier / adv-train verbs. */
PS_API ps_status ps_classifier_load(const char* path, ps_classifier** out);
PS_API void ps_classifier_free(ps_classifier* model);
PS_API ps_status ps_classifier_num_classes(const ps_classifier* model, size_t* out);
/* Writes min(capacity, classes) probabilities. */
PS_API ps_status ps_classifier_predict(const ps_classifier* model, const char* text, double* probs, size_t capacity);
/* Output shift between the model's predictions on two texts. */
PS_API ps_status ps_classifier_shift(const ps_classifier* model, const char* text_a, const char* text_b,
                                     double* shift);

/* Norm-bound search for one perturbation. `edits_json` is an array of
 * [position, original, replacement] triples; `search_json` may be NULL or an
 * object with any of steps, alpha, interval, band, eps_max. The result is a
 * tuple record in the JSONL format used by find-epsilon. */
PS_API ps_status ps_find_epsilon(const ps_classifier* model, const char* text, unsigned label,
                                 const char* edits_json, const char* search_json, char** result_json);

/* Scorer models written by train-scorer. `marked_text` uses the scorer input
 * form, e.g. "it would recall [ reminds ] about". */
PS_API ps_status ps_scorer_load(const char* path, ps_scorer** out);
PS_API void ps_scorer_free(ps_scorer* model);
PS_API ps_status ps_scorer_predict(const ps_scorer* model, const char* marked_text, double* epsilon);

/* Pipeline verbs. `config_json` is a flat object of configuration keys; the
 * summary (outputs, metrics, manifest path) is returned as JSON. */
PS_API ps_status ps_run_command(const char* verb, const char* config_json, char** result_json);
/* Array of {name, type, default, help} describing every configuration key. */
PS_API ps_status ps_config_keys(char** keys_json);
/* Array of verb names. */
PS_API ps_status ps_verbs(char** verbs_json);

#ifdef __cplusplus
}
#endif

#endif /* PERTURBSCORE_H */
