#include "perturbscore/scorer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include <Eigen/Eigenvalues>

#include "model_io.hpp"
#include "parallel.hpp"
#include "perturbscore/error.hpp"
#include "perturbscore/hash.hpp"

namespace pscore {

std::vector<TokenRole> scorer_roles(std::span<const TokenId> input) {
  std::vector<TokenRole> roles(input.size(), TokenRole::kPlain);
  for (std::size_t i = 0; i < input.size(); ++i) {
    if (input[i] == Vocabulary::kOpen || input[i] == Vocabulary::kClose) roles[i] = TokenRole::kMarker;
  }
  for (std::size_t i = 0; i + 3 < input.size(); ++i) {
    if (input[i + 1] == Vocabulary::kOpen && input[i + 3] == Vocabulary::kClose &&
        roles[i] == TokenRole::kPlain && roles[i + 2] == TokenRole::kPlain) {
      roles[i] = TokenRole::kOriginal;
      roles[i + 2] = TokenRole::kReplacement;
    }
  }
  return roles;
}

std::vector<Tensor*> ScorerParams::all() {
  return {&embedding, &w_mean, &w_edit, &b_edit, &w_feat, &b1, &w2, &b2, &wo, &bo};
}

std::vector<const Tensor*> ScorerParams::all() const {
  return {&embedding, &w_mean, &w_edit, &b_edit, &w_feat, &b1, &w2, &b2, &wo, &bo};
}

const std::vector<std::string>& ScorerParams::names() {
  static const std::vector<std::string> kNames = {"embedding", "w_mean", "w_edit", "b_edit", "w_feat",
                                                  "b1",        "w2",     "b2",     "wo",     "bo"};
  return kNames;
}

ScorerParams ScorerParams::zeros_like() const {
  ScorerParams z;
  auto dst = z.all();
  auto src = all();
  for (std::size_t i = 0; i < kCount; ++i) *dst[i] = Tensor(src[i]->shape());
  return z;
}

ScorerModel ScorerModel::zeros(Vocabulary vocab, const ScorerConfig& c) {
  if (c.embed_dim == 0 || c.hidden_dim == 0 || c.max_len == 0 || !(c.eps_max > 0.0)) {
    throw Error(ErrorCode::kConfig, "scorer config: dimensions and eps_max must be positive");
  }
  ScorerModel m{std::move(vocab), c, {}};
  const std::size_t v = m.vocab.size(), d = c.embed_dim, h = c.hidden_dim;
  m.params.embedding = Tensor({v, d});
  m.params.w_mean = Tensor({d, h});
  m.params.w_edit = Tensor({d, h});
  m.params.b_edit = Tensor({1, h});
  m.params.w_feat = Tensor({2, h});
  m.params.b1 = Tensor({1, h});
  m.params.w2 = Tensor({h, h});
  m.params.b2 = Tensor({1, h});
  m.params.wo = Tensor({h, 2});
  m.params.bo = Tensor({1, 2});
  return m;
}

ScorerModel ScorerModel::initialize(Vocabulary vocab, const ScorerConfig& c, std::uint64_t seed) {
  ScorerModel m = zeros(std::move(vocab), c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, c.init_scale / std::sqrt(static_cast<double>(c.embed_dim)));
  for (double& v : m.params.embedding.data()) v = normal(rng);
  for (Tensor* w : {&m.params.w_mean, &m.params.w_edit, &m.params.w_feat, &m.params.w2, &m.params.wo}) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w->rows() + w->cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : w->data()) v = dist(rng);
  }
  return m;
}

std::string ScorerModel::id() const {
  Fnv1a h;
  h.u64(vocab.hash()).u64(config.embed_dim).u64(config.hidden_dim).u64(config.max_len);
  h.u64(std::bit_cast<std::uint64_t>(config.eps_max));
  for (const Tensor* t : params.all())
    for (double v : t->data()) h.u64(std::bit_cast<std::uint64_t>(v));
  return hex64(h.value());
}

// ------------------------------------------------------------------ session

ScorerSession::ScorerSession(const ScorerModel& model) : model_(&model) {
  x_ = graph_.input("x");
  mean_w_ = graph_.input("mean_weights");
  pairs_ = graph_.input("edit_pairs");
  edit_sum_ = graph_.input("edit_sum");
  feat_ = graph_.input("features");
  NodeId w_mean = graph_.input("w_mean"), w_edit = graph_.input("w_edit"), b_edit = graph_.input("b_edit");
  NodeId w_feat = graph_.input("w_feat");
  NodeId b1 = graph_.input("b1");
  NodeId w2 = graph_.input("w2"), b2 = graph_.input("b2");
  NodeId wo = graph_.input("wo"), bo = graph_.input("bo");
  select_ = graph_.input("select");
  target_ = graph_.input("neg_target");

  NodeId pooled_mean = graph_.matmul(mean_w_, x_);
  // One row per edit: original embedding minus replacement embedding.
  NodeId edit_diff = graph_.matmul(pairs_, x_);
  NodeId per_edit = graph_.tanh(graph_.add(graph_.matmul(edit_diff, w_edit), b_edit));
  NodeId pooled_edit = graph_.matmul(edit_sum_, per_edit);
  NodeId pre1 = graph_.add(graph_.matmul(pooled_mean, w_mean), pooled_edit);
  pre1 = graph_.add(graph_.add(pre1, graph_.matmul(feat_, w_feat)), b1);
  NodeId h1 = graph_.tanh(pre1);
  NodeId h2 = graph_.tanh(graph_.add(graph_.matmul(h1, w2), b2));
  NodeId probs = graph_.softmax(graph_.add(graph_.matmul(h2, wo), bo));
  // eps_max * sigmoid(l0 - l1), written as a two-way softmax.
  pred_ = graph_.sum(graph_.multiply(probs, select_));
  NodeId diff = graph_.add(pred_, target_);
  loss_ = graph_.multiply(diff, diff);
  graph_.set_output(loss_);

  param_nodes_ = {w_mean, w_edit, b_edit, w_feat, b1, w2, b2, wo, bo};
  reload_parameters();
  graph_.bind(select_, Tensor::matrix(1, 2, {model.config.eps_max, 0.0}));
  graph_.bind(target_, Tensor::scalar(0.0));
}

void ScorerSession::reload_parameters() {
  const auto src = model_->params.all();
  for (std::size_t i = 0; i < param_nodes_.size(); ++i) graph_.bind(param_nodes_[i], *src[i + 1]);
}

void ScorerSession::run(std::span<const TokenId> input, double target) {
  const std::size_t n = input.size(), d = model_->config.embed_dim, v = model_->vocab.size();
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "scorer: empty input");
  if (n > model_->config.max_len) {
    throw Error(ErrorCode::kInvalidArgument, "scorer: input length " + std::to_string(n) + " exceeds max_len " +
                                                 std::to_string(model_->config.max_len));
  }
  const auto roles = scorer_roles(input);
  rows_.resize(n);
  Tensor x({n, d});
  Tensor mean_w({1, n});
  std::vector<std::size_t> originals;
  std::size_t words = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (input[i] >= v) throw Error(ErrorCode::kInvalidArgument, "scorer: token id out of vocabulary");
    rows_[i] = input[i];
    std::copy_n(&model_->params.embedding.data()[rows_[i] * d], d, &x.data()[i * d]);
    if (roles[i] != TokenRole::kMarker) ++words;
    if (roles[i] == TokenRole::kOriginal) originals.push_back(i);
  }
  if (words == 0) throw Error(ErrorCode::kInvalidArgument, "scorer: input has only markers");
  for (std::size_t i = 0; i < n; ++i)
    if (roles[i] != TokenRole::kMarker) mean_w[i] = 1.0 / static_cast<double>(words);

  // An unedited input gets one all-zero pair row with zero weight.
  const std::size_t edits = originals.size();
  Tensor pairs({std::max<std::size_t>(edits, 1), n});
  Tensor edit_sum({1, std::max<std::size_t>(edits, 1)});
  for (std::size_t e = 0; e < edits; ++e) {
    pairs.at(e, originals[e]) = 1.0;
    pairs.at(e, originals[e] + 2) = -1.0;
    edit_sum[e] = 1.0;
  }
  // words - edits is the length of the unperturbed text and is at least 1.
  const double k = static_cast<double>(edits);
  const double length = static_cast<double>(words - edits);
  graph_.bind(x_, std::move(x));
  graph_.bind(mean_w_, std::move(mean_w));
  graph_.bind(pairs_, std::move(pairs));
  graph_.bind(edit_sum_, std::move(edit_sum));
  graph_.bind(feat_, Tensor::matrix(1, 2, {k, k / length}));
  graph_.bound(target_)[0] = -target;
  graph_.forward();
}

double ScorerSession::predict(std::span<const TokenId> input) {
  run(input, 0.0);
  const double eps_max = model_->config.eps_max;
  return std::clamp(graph_.value(pred_).item(), std::numeric_limits<double>::denorm_min(),
                    std::nextafter(eps_max, 0.0));
}

double ScorerSession::accumulate_gradients(std::span<const TokenId> input, double target, ScorerParams& grads) {
  run(input, target);
  graph_.backward();
  auto dst = grads.all();
  for (std::size_t i = 0; i < param_nodes_.size(); ++i) {
    const Tensor& g = graph_.gradient(param_nodes_[i]);
    Tensor& acc = *dst[i + 1];
    for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k];
  }
  const Tensor& gx = graph_.gradient(x_);
  const std::size_t d = model_->config.embed_dim;
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    double* row = &grads.embedding.data()[rows_[i] * d];
    for (std::size_t j = 0; j < d; ++j) row[j] += gx[i * d + j];
  }
  return graph_.value(loss_).item();
}

// ----------------------------------------------------------------- training

double mean_squared_error(const ScorerModel& model, std::span<const ScorerExample> examples) {
  if (examples.empty()) return 0.0;
  ScorerSession session(model);
  double total = 0.0;
  for (const auto& ex : examples) {
    const double e = session.predict(ex.input) - ex.target;
    total += e * e;
  }
  return total / static_cast<double>(examples.size());
}

Tensor cooccurrence_embedding(const Vocabulary& vocab, std::span<const TokenSequence> texts, std::size_t dim,
                              double scale) {
  const std::size_t v = vocab.size();
  if (dim == 0 || !(scale > 0.0)) throw Error(ErrorCode::kConfig, "cooccurrence_embedding: dim and scale must be positive");
  // Dense index over tokens that actually occur.
  std::vector<std::ptrdiff_t> slot(v, -1);
  std::vector<TokenId> seen;
  std::vector<std::vector<std::size_t>> docs;
  for (const auto& t : texts) {
    std::set<TokenId> uniq;
    for (TokenId id : t.tokens) {
      if (id >= v) throw Error(ErrorCode::kInvalidArgument, "cooccurrence_embedding: token id out of vocabulary");
      if (!Vocabulary::is_reserved(id)) uniq.insert(id);
    }
    std::vector<std::size_t> doc;
    for (TokenId id : uniq) {
      if (slot[id] < 0) {
        slot[id] = static_cast<std::ptrdiff_t>(seen.size());
        seen.push_back(id);
      }
      doc.push_back(static_cast<std::size_t>(slot[id]));
    }
    docs.push_back(std::move(doc));
  }
  const std::size_t m = seen.size();
  if (m <= dim) {
    throw Error(ErrorCode::kInvalidArgument, "cooccurrence_embedding: " + std::to_string(m) +
                                                 " distinct tokens, need more than dim=" + std::to_string(dim));
  }
  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (const auto& doc : docs)
    for (std::size_t a : doc)
      for (std::size_t b : doc)
        if (a != b) counts(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += 1.0;
  const Eigen::VectorXd rows = counts.rowwise().sum();
  const double total = rows.sum();
  if (!(total > 0.0)) throw Error(ErrorCode::kInvalidArgument, "cooccurrence_embedding: no co-occurring tokens");
  Eigen::MatrixXd ppmi = Eigen::MatrixXd::Zero(counts.rows(), counts.cols());
  for (Eigen::Index i = 0; i < counts.rows(); ++i)
    for (Eigen::Index j = 0; j < counts.cols(); ++j)
      if (counts(i, j) > 0.0) ppmi(i, j) = std::max(0.0, std::log(counts(i, j) * total / (rows(i) * rows(j))));

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(ppmi);
  if (solver.info() != Eigen::Success) throw Error(ErrorCode::kNumeric, "cooccurrence_embedding: eigensolver failed");
  // Eigenvalues come in ascending order; the last `dim` are the largest.
  const Eigen::Index first = static_cast<Eigen::Index>(m - dim);
  Tensor out({v, dim});
  double norm_sum = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    double n2 = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
      const Eigen::Index col = first + static_cast<Eigen::Index>(dim - 1 - k);
      const double value = solver.eigenvectors()(static_cast<Eigen::Index>(r), col) *
                           std::sqrt(std::max(0.0, solver.eigenvalues()(col)));
      out.at(seen[r], k) = value;
      n2 += value * value;
    }
    norm_sum += std::sqrt(n2);
  }
  if (!(norm_sum > 0.0)) throw Error(ErrorCode::kNumeric, "cooccurrence_embedding: all rows are zero");
  const double factor = scale * static_cast<double>(m) / norm_sum;
  for (double& x : out.data()) x *= factor;
  return out;
}

ScorerTrainResult train_scorer(Vocabulary vocab, std::span<const ScorerExample> train, const ScorerConfig& mcfg,
                               const ScorerTrainConfig& cfg) {
  if (cfg.batch_size == 0 || !(cfg.learning_rate > 0.0)) {
    throw Error(ErrorCode::kConfig, "scorer train: batch_size and learning_rate must be positive");
  }
  if (!(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0)) {
    throw Error(ErrorCode::kConfig, "scorer train: validation_fraction must be in [0,1)");
  }
  bool distinct = false;
  for (const auto& ex : train) {
    if (!(ex.target > 0.0 && ex.target <= mcfg.eps_max)) {
      throw Error(ErrorCode::kInvalidArgument, "scorer train: target " + std::to_string(ex.target) +
                                                   " outside (0, eps_max]");
    }
    distinct = distinct || ex.target != train.front().target;
  }
  if (!distinct) throw Error(ErrorCode::kInvalidArgument, "scorer train: need at least 2 distinct targets");

  ScorerTrainResult result{ScorerModel::initialize(std::move(vocab), mcfg, cfg.seed), {}};
  ScorerModel& model = result.model;
  if (cfg.initial_embedding.size() != 0) {
    if (cfg.initial_embedding.shape() != model.params.embedding.shape()) {
      throw Error(ErrorCode::kShape, "scorer train: initial embedding is " + shape_string(cfg.initial_embedding.shape()) +
                                         ", model table is " + shape_string(model.params.embedding.shape()));
    }
    model.params.embedding = cfg.initial_embedding;
  }
  std::mt19937_64 rng(cfg.seed ^ 0x5851f42d4c957f2dULL);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(train.size())));
  n_val = std::min(n_val, train.size() - 1);
  std::vector<ScorerExample> validation;
  for (std::size_t i = 0; i < n_val; ++i) validation.push_back(train[order[i]]);
  std::vector<std::size_t> fit(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  ScorerSession session(model);
  ScorerParams grads = model.params.zeros_like();
  ScorerParams best = model.params;
  double best_loss = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(fit.begin(), fit.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < fit.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(fit.size(), start + cfg.batch_size);
      for (Tensor* g : grads.all()) g->fill(0.0);
      try {
        for (std::size_t k = start; k < end; ++k) {
          const ScorerExample& ex = train[fit[k]];
          loss_sum += session.accumulate_gradients(ex.input, ex.target, grads);
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNumeric) throw;
        throw Error(ErrorCode::kNumeric, "scorer training diverged at epoch " + std::to_string(epoch) + ": " +
                                             e.what());
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      double norm2 = 0.0;
      for (Tensor* g : grads.all())
        for (double& v : g->data()) {
          v *= scale;
          norm2 += v * v;
        }
      const double norm = std::sqrt(norm2);
      const double step = cfg.learning_rate * ((cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0);
      auto ps = model.params.all();
      auto gs = grads.all();
      for (std::size_t i = 0; i < ps.size(); ++i)
        for (std::size_t k = 0; k < ps[i]->size(); ++k) (*ps[i])[k] -= step * (*gs[i])[k];
      session.reload_parameters();
    }
    ScorerEpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / static_cast<double>(fit.size());
    if (!std::isfinite(log.train_loss)) {
      throw Error(ErrorCode::kNumeric, "scorer training diverged at epoch " + std::to_string(epoch) + ": NaN loss");
    }
    log.validation_loss = mean_squared_error(model, validation);
    result.log.push_back(log);
    if (cfg.restore_best && !validation.empty() && log.validation_loss < best_loss) {
      best_loss = log.validation_loss;
      best = model.params;
      result.best_epoch = epoch;
    }
  }
  if (cfg.restore_best && !validation.empty() && !result.log.empty()) model.params = std::move(best);
  else if (!result.log.empty()) result.best_epoch = result.log.size() - 1;
  return result;
}

// --------------------------------------------------------------- evaluation

double predict_epsilon(const ScorerModel& model, const ScorerExample& example) {
  ScorerSession session(model);
  return session.predict(example.input);
}

std::vector<double> predict_all(const ScorerModel& model, std::span<const ScorerExample> examples,
                                std::size_t workers) {
  std::vector<double> out(examples.size());
  workers = std::max<std::size_t>(1, std::min(workers, examples.size()));
  std::vector<ScorerSession> sessions;
  sessions.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) sessions.emplace_back(model);
  detail::parallel_for(examples.size(), workers,
                       [&](std::size_t i, std::size_t w) { out[i] = sessions[w].predict(examples[i].input); });
  return out;
}

CorrelationReport evaluate_predictions(std::span<const ScorerExample> test, std::span<const double> predictions) {
  if (test.empty()) throw Error(ErrorCode::kInvalidArgument, "evaluate: empty test set");
  if (predictions.size() != test.size()) throw Error(ErrorCode::kInvalidArgument, "evaluate: prediction count differs");
  std::vector<double> truth, dist, neg_sim;
  for (const auto& ex : test) {
    truth.push_back(ex.target);
    dist.push_back(static_cast<double>(ex.edit_distance));
    neg_sim.push_back(-ex.similarity);
  }
  CorrelationReport report;
  report.samples = test.size();
  report.rows.push_back(correlate("scorer", predictions, truth));
  // A baseline that is constant over the test set has no rank correlation;
  // its row is left out rather than failing the whole report.
  auto varies = [](const std::vector<double>& v) {
    return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) != v.end();
  };
  if (varies(dist)) report.rows.push_back(correlate("edit_distance", dist, truth));
  if (varies(neg_sim)) report.rows.push_back(correlate("neg_similarity", neg_sim, truth));
  return report;
}

CorrelationReport evaluate_scorer(const ScorerModel& model, std::span<const ScorerExample> test, std::size_t workers) {
  if (test.empty()) throw Error(ErrorCode::kInvalidArgument, "evaluate: empty test set");
  CorrelationReport r = evaluate_predictions(test, predict_all(model, test, workers));
  r.model = model.id();
  return r;
}

CorrelationReport cross_evaluate(const ScorerModel& model, const ScorerDataset& foreign, const std::string& setup,
                                 std::size_t workers) {
  if (foreign.vocab_hash != model.vocab.hash()) {
    throw Error(ErrorCode::kMismatch, "cross_evaluate: dataset vocabulary " + hex64(foreign.vocab_hash) +
                                          " differs from scorer vocabulary " + hex64(model.vocab.hash()) +
                                          "; rebuild both datasets with a shared vocabulary");
  }
  CorrelationReport r = evaluate_scorer(model, foreign.examples, workers);
  r.dataset = foreign.tag;
  r.method = setup;
  return r;
}

void write_prediction_dump(const std::string& path, std::span<const ScorerExample> examples,
                           std::span<const double> predictions) {
  if (examples.size() != predictions.size()) throw Error(ErrorCode::kInvalidArgument, "dump: size mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out << "text_hash,epsilon_true,epsilon_pred,edit_distance,similarity_proxy\n";
  char buf[160];
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.17g,%zu,%.17g\n", hex64(ex.text_hash).c_str(), ex.target,
                  predictions[i], ex.edit_distance, ex.similarity);
    out << buf;
  }
  if (!out) throw Error(ErrorCode::kIo, "write to '" + path + "' failed");
}

// -------------------------------------------------------------- persistence

void save_scorer(const ScorerModel& model, const std::string& path) {
  const auto& c = model.config;
  nlohmann::json header = {
      {"kind", "scorer"},
      {"model_id", model.id()},
      {"config",
       {{"embed_dim", c.embed_dim},
        {"hidden_dim", c.hidden_dim},
        {"max_len", c.max_len},
        {"eps_max", c.eps_max},
        {"init_scale", c.init_scale}}},
      {"loss", "squared_error"},
      {"output", "eps_max * sigmoid"},
      {"vocab_hash", hex64(model.vocab.hash())},
      {"vocab", model.vocab.tokens()},
  };
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  const auto ps = model.params.all();
  for (std::size_t i = 0; i < ps.size(); ++i) tensors.emplace_back(ScorerParams::names()[i], ps[i]);
  detail::write_model_file(path, std::move(header), tensors);
}

ScorerModel load_scorer(const std::string& path) {
  auto mf = detail::read_model_file(path);
  const auto& h = mf.header;
  try {
    if (h.at("kind") != "scorer") throw Error(ErrorCode::kParse, path + ": not a scorer model");
    ScorerConfig c;
    const auto& jc = h.at("config");
    c.embed_dim = jc.at("embed_dim");
    c.hidden_dim = jc.at("hidden_dim");
    c.max_len = jc.at("max_len");
    c.eps_max = jc.at("eps_max");
    c.init_scale = jc.value("init_scale", 0.5);
    Vocabulary vocab = Vocabulary::from_tokens(h.at("vocab").get<std::vector<std::string>>());
    if (hex64(vocab.hash()) != h.at("vocab_hash").get<std::string>()) {
      throw Error(ErrorCode::kMismatch, path + ": vocabulary hash mismatch");
    }
    ScorerModel m = ScorerModel::zeros(std::move(vocab), c);
    auto ps = m.params.all();
    for (std::size_t i = 0; i < ps.size(); ++i) *ps[i] = mf.take(ScorerParams::names()[i], ps[i]->shape());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": bad header: " + e.what());
  }
}

}  // namespace pscore
