#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "perturbscore/diffcore.hpp"

namespace pscore {

using TokenId = std::uint32_t;
using ClassId = std::uint32_t;

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kOpen = 2;
  static constexpr TokenId kClose = 3;
  static constexpr TokenId kReservedCount = 4;

  Vocabulary();

  // Frequency-ordered vocabulary over the words of `texts`; ties break
  // lexicographically so the result does not depend on input order.
  static Vocabulary build(std::span<const std::string> texts, std::size_t max_size, std::size_t min_count = 1);
  static Vocabulary from_tokens(std::span<const std::string> tokens);

  TokenId add(std::string_view token);
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const noexcept { return tokens_.size(); }
  static bool is_reserved(TokenId id) noexcept { return id < kReservedCount; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::uint64_t hash() const;

 private:
  std::unordered_map<std::string, TokenId> index_;
  std::vector<std::string> tokens_;
};

// Lowercases, splits on whitespace and punctuation; "[" and "]" survive as
// standalone words.
std::vector<std::string> split_words(std::string_view text);

struct TokenSequence {
  std::vector<TokenId> tokens;
  ClassId label = 0;
  std::string raw_text;

  std::uint64_t hash() const;
  std::size_t size() const noexcept { return tokens.size(); }
};

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len, ClassId label = 0);

struct LabeledText {
  ClassId label = 0;
  std::string text;
};

std::vector<LabeledText> read_corpus_tsv(const std::string& path);
void write_corpus_tsv(const std::string& path, std::span<const LabeledText> corpus);

struct ClassifierConfig {
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 16;
  std::size_t num_classes = 2;
  std::size_t max_len = 64;
  // Per-entry std of the initial embedding is init_scale / sqrt(embed_dim).
  double init_scale = 1.0;
};

struct ClassifierParams {
  Tensor embedding;  // V x d
  Tensor w1, b1;     // d x h, 1 x h
  Tensor w2, b2;     // h x h, 1 x h
  Tensor wc, bc;     // h x C, 1 x C

  static constexpr std::size_t kCount = 7;
  std::vector<Tensor*> all();
  std::vector<const Tensor*> all() const;
  static const std::vector<std::string>& names();
  ClassifierParams zeros_like() const;
};

struct ClassifierModel {
  Vocabulary vocab;
  ClassifierConfig config;
  ClassifierParams params;

  static ClassifierModel initialize(Vocabulary vocab, const ClassifierConfig& config, std::uint64_t seed);
  static ClassifierModel zeros(Vocabulary vocab, const ClassifierConfig& config);
  std::size_t num_classes() const noexcept { return config.num_classes; }
  // Content hash of vocabulary, config and parameters.
  std::string id() const;
};

// n x d embedding matrix for the sequence (no padding rows are materialized).
Tensor embed(const TokenSequence& seq, const ClassifierModel& model);

struct ClassifierOutput {
  std::vector<double> logits;
  std::vector<double> probs;
  ClassId predicted() const;
};

struct LossGradient {
  double loss = 0.0;
  std::vector<double> probs;
  Tensor grad;  // d loss / d X
};

// Differentiable classifier over embedding inputs, the surface the attack
// code needs. Implementations hold per-worker scratch state.
class EmbeddingClassifier {
 public:
  virtual ~EmbeddingClassifier() = default;
  virtual std::size_t num_classes() const = 0;
  virtual ClassifierOutput forward_from_embeddings(const Tensor& x) = 0;
  // Cross-entropy against `label` and its gradient with respect to x.
  virtual LossGradient loss_gradient(const Tensor& x, ClassId label) = 0;
};

// Binds one immutable model to a reusable graph. One per worker thread.
class ClassifierSession final : public EmbeddingClassifier {
 public:
  explicit ClassifierSession(const ClassifierModel& model);

  const ClassifierModel& model() const noexcept { return *model_; }
  std::size_t num_classes() const override { return model_->num_classes(); }
  ClassifierOutput forward(const TokenSequence& seq);
  ClassifierOutput forward_from_embeddings(const Tensor& x) override;
  LossGradient loss_gradient(const Tensor& x, ClassId label) override;

  // Adds d loss / d params at embed(seq) + delta into `grads`; returns loss.
  double accumulate_gradients(const TokenSequence& seq, const Tensor* delta, ClassifierParams& grads);
  // Re-reads dense parameters after the model was updated in place.
  void reload_parameters();

 private:
  void run(const Tensor& x, ClassId label);

  const ClassifierModel* model_;
  Graph graph_;
  NodeId x_ = 0, target_ = 0, logits_ = 0, probs_ = 0, loss_ = 0;
  std::vector<NodeId> param_nodes_;
};

ClassifierOutput forward(const ClassifierModel& model, const TokenSequence& seq);
ClassifierOutput forward_from_embeddings(const ClassifierModel& model, const Tensor& x);

// ||a - b|| / (||a|| * ||b||) over model output vectors.
double model_output_shift(std::span<const double> a, std::span<const double> b);

struct TrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 0.5;
  std::size_t batch_size = 16;
  double clip_norm = 5.0;
  double test_fraction = 0.2;
  // When positive, a validation_fraction share of the training rows is held
  // out and training ends after the first epoch whose validation accuracy
  // reaches stop_accuracy.
  double stop_accuracy = 0.0;
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;
};

// Embedding-space adversarial training: each example's loss is taken at
// X + delta, delta from `steps` normalized ascent steps projected on the
// epsilon L2 ball.
struct AdvTrainConfig {
  std::size_t steps = 5;
  double alpha = 0.1;
  double epsilon = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double validation_accuracy = 0.0;  // 0 when no validation rows are held out
  double mean_delta_norm = 0.0;
  double max_delta_norm = 0.0;
};

struct TrainResult {
  ClassifierModel model;
  std::vector<EpochLog> log;
  double test_accuracy = 0.0;
};

TrainResult train_classifier(Vocabulary vocab, std::span<const TokenSequence> corpus,
                             const ClassifierConfig& model_config, const TrainConfig& config);
TrainResult adv_train_classifier(Vocabulary vocab, std::span<const TokenSequence> corpus,
                                 const ClassifierConfig& model_config, const TrainConfig& config,
                                 const AdvTrainConfig& adv);

double accuracy(const ClassifierModel& model, std::span<const TokenSequence> data);

void save_classifier(const ClassifierModel& model, const std::string& path);
ClassifierModel load_classifier(const std::string& path);

}  // namespace pscore
