#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "perturbscore/diffcore.hpp"
#include "perturbscore/stats.hpp"
#include "perturbscore/textmodel.hpp"
#include "perturbscore/tuplestore.hpp"

namespace pscore {

struct ScorerConfig {
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 64;
  std::size_t max_len = 96;
  double eps_max = 1.0;
  double init_scale = 0.5;
};

struct ScorerTrainConfig {
  std::size_t epochs = 30;
  double learning_rate = 0.1;
  std::size_t batch_size = 16;
  double clip_norm = 5.0;
  double validation_fraction = 0.1;
  // Keep the parameters of the epoch with the lowest validation loss.
  bool restore_best = true;
  std::uint64_t seed = 1;
  // Optional V x d starting point for the token table, e.g. the classifier's
  // embeddings over the same vocabulary. Empty means random init.
  Tensor initial_embedding;
};

// Token roles in a marked-up input `... orig [ repl ] ...`.
enum class TokenRole : std::uint8_t { kPlain, kMarker, kOriginal, kReplacement };
std::vector<TokenRole> scorer_roles(std::span<const TokenId> input);

// Encoder: one token table feeds three views that are summed into the first
// hidden layer:
//   mean over word rows (markers excluded)            -> w_mean
//   sum over edits of tanh((orig - repl) w_edit + b_edit)
//   [edit count, edit count / text length]            -> w_feat
struct ScorerParams {
  Tensor embedding;  // V x d
  Tensor w_mean;     // d x h
  Tensor w_edit;     // d x h
  Tensor b_edit;     // 1 x h
  Tensor w_feat;     // 2 x h
  Tensor b1;         // 1 x h
  Tensor w2, b2;     // h x h, 1 x h
  Tensor wo, bo;     // h x 2, 1 x 2

  static constexpr std::size_t kCount = 10;
  std::vector<Tensor*> all();
  std::vector<const Tensor*> all() const;
  static const std::vector<std::string>& names();
  ScorerParams zeros_like() const;
};

struct ScorerModel {
  Vocabulary vocab;
  ScorerConfig config;
  ScorerParams params;

  static ScorerModel initialize(Vocabulary vocab, const ScorerConfig& config, std::uint64_t seed);
  static ScorerModel zeros(Vocabulary vocab, const ScorerConfig& config);
  std::string id() const;
};

// Reusable graph bound to one model; not thread-safe, one per worker.
class ScorerSession {
 public:
  explicit ScorerSession(const ScorerModel& model);

  double predict(std::span<const TokenId> input);
  // Squared error against `target`, gradients added into `grads`.
  double accumulate_gradients(std::span<const TokenId> input, double target, ScorerParams& grads);
  void reload_parameters();

 private:
  void run(std::span<const TokenId> input, double target);

  const ScorerModel* model_;
  Graph graph_;
  NodeId x_ = 0, mean_w_ = 0, pairs_ = 0, edit_sum_ = 0, feat_ = 0, target_ = 0, select_ = 0, pred_ = 0, loss_ = 0;
  std::vector<NodeId> param_nodes_;
  std::vector<std::size_t> rows_;
};

struct ScorerEpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct ScorerTrainResult {
  ScorerModel model;
  std::vector<ScorerEpochLog> log;
  std::size_t best_epoch = 0;  // epoch whose parameters were kept
};

// Distributional token table learned from raw texts alone: positive PMI of
// within-text co-occurrence, factored by its top `dim` eigenpairs. Rows are
// rescaled so the mean norm over non-reserved tokens is `scale`; reserved
// and unseen tokens get zero rows.
Tensor cooccurrence_embedding(const Vocabulary& vocab, std::span<const TokenSequence> texts, std::size_t dim,
                              double scale);

ScorerTrainResult train_scorer(Vocabulary vocab, std::span<const ScorerExample> train, const ScorerConfig& model_config,
                               const ScorerTrainConfig& config);

// Always strictly inside (0, eps_max).
double predict_epsilon(const ScorerModel& model, const ScorerExample& example);
std::vector<double> predict_all(const ScorerModel& model, std::span<const ScorerExample> examples,
                                std::size_t workers = 1);

double mean_squared_error(const ScorerModel& model, std::span<const ScorerExample> examples);

// Rows "scorer", "edit_distance" and "neg_similarity", each correlated with
// the found epsilon over the same examples.
CorrelationReport evaluate_scorer(const ScorerModel& model, std::span<const ScorerExample> test,
                                  std::size_t workers = 1);
CorrelationReport evaluate_predictions(std::span<const ScorerExample> test, std::span<const double> predictions);

// Evaluation on a dataset built elsewhere; the vocabularies must agree.
CorrelationReport cross_evaluate(const ScorerModel& model, const ScorerDataset& foreign, const std::string& setup,
                                 std::size_t workers = 1);

// CSV: text_hash,epsilon_true,epsilon_pred,edit_distance,similarity_proxy
void write_prediction_dump(const std::string& path, std::span<const ScorerExample> examples,
                           std::span<const double> predictions);

void save_scorer(const ScorerModel& model, const std::string& path);
ScorerModel load_scorer(const std::string& path);

}  // namespace pscore
