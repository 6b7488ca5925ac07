#include "perturbscore/textmodel.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include "model_io.hpp"
#include "perturbscore/epsilon_search.hpp"
#include "perturbscore/error.hpp"
#include "perturbscore/hash.hpp"

namespace pscore {

namespace {

const std::string kReservedTokens[Vocabulary::kReservedCount] = {"[pad]", "[unk]", "[", "]"};

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

}  // namespace

// ---------------------------------------------------------------- vocabulary

Vocabulary::Vocabulary() {
  for (const auto& t : kReservedTokens) add(t);
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t max_size, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  for (const auto& text : texts)
    for (auto& w : split_words(text)) ++counts[std::move(w)];

  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [word, count] : ranked) {
    if (vocab.size() >= max_size) break;
    if (count < min_count || vocab.contains(word)) continue;
    vocab.add(word);
  }
  return vocab;
}

Vocabulary Vocabulary::from_tokens(std::span<const std::string> tokens) {
  if (tokens.size() < kReservedCount) throw Error(ErrorCode::kParse, "vocabulary: missing reserved tokens");
  for (TokenId i = 0; i < kReservedCount; ++i) {
    if (tokens[i] != kReservedTokens[i]) {
      throw Error(ErrorCode::kParse, "vocabulary: reserved id " + std::to_string(i) + " must be '" +
                                         kReservedTokens[i] + "'");
    }
  }
  Vocabulary vocab;
  for (std::size_t i = kReservedCount; i < tokens.size(); ++i) {
    if (vocab.contains(tokens[i])) throw Error(ErrorCode::kParse, "vocabulary: duplicate token '" + tokens[i] + "'");
    vocab.add(tokens[i]);
  }
  return vocab;
}

TokenId Vocabulary::add(std::string_view token) {
  auto it = index_.find(std::string(token));
  if (it != index_.end()) return it->second;
  const auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  index_.emplace(tokens_.back(), id);
  return id;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[id];
}

std::uint64_t Vocabulary::hash() const {
  Fnv1a h;
  for (const auto& t : tokens_) h.str(t);
  return h.value();
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == '[' || c == ']') {
      flush();
      words.emplace_back(1, ch);
    } else if (is_word_byte(c)) {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else {
      flush();
    }
  }
  flush();
  return words;
}

std::uint64_t TokenSequence::hash() const {
  Fnv1a h;
  for (TokenId t : tokens) h.u64(t);
  return h.value();
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len, ClassId label) {
  TokenSequence seq;
  seq.label = label;
  seq.raw_text = std::string(text);
  for (const auto& w : split_words(text)) {
    if (seq.tokens.size() >= max_len) break;
    seq.tokens.push_back(vocab.id(w));
  }
  if (seq.tokens.empty()) throw Error(ErrorCode::kInvalidArgument, "tokenize: text has no tokens");
  return seq;
}

std::vector<LabeledText> read_corpus_tsv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open corpus '" + path + "'");
  std::vector<LabeledText> corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    ClassId label = 0;
    const char* end = line.data() + (tab == std::string::npos ? 0 : tab);
    auto [ptr, ec] = std::from_chars(line.data(), end, label);
    if (tab == std::string::npos || ec != std::errc() || ptr != end) {
      throw Error(ErrorCode::kParse, path + ":" + std::to_string(lineno) + ": expected 'label<TAB>text'");
    }
    corpus.push_back({label, line.substr(tab + 1)});
  }
  return corpus;
}

void write_corpus_tsv(const std::string& path, std::span<const LabeledText> corpus) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  for (const auto& rec : corpus) {
    if (rec.text.find_first_of("\t\n") != std::string::npos) {
      throw Error(ErrorCode::kInvalidArgument, "corpus text contains a tab or newline");
    }
    out << rec.label << '\t' << rec.text << '\n';
  }
}

// ------------------------------------------------------------------- params

std::vector<Tensor*> ClassifierParams::all() { return {&embedding, &w1, &b1, &w2, &b2, &wc, &bc}; }

std::vector<const Tensor*> ClassifierParams::all() const {
  return {&embedding, &w1, &b1, &w2, &b2, &wc, &bc};
}

const std::vector<std::string>& ClassifierParams::names() {
  static const std::vector<std::string> kNames = {"embedding", "w1", "b1", "w2", "b2", "wc", "bc"};
  return kNames;
}

ClassifierParams ClassifierParams::zeros_like() const {
  ClassifierParams z;
  auto dst = z.all();
  auto src = all();
  for (std::size_t i = 0; i < kCount; ++i) *dst[i] = Tensor(src[i]->shape());
  return z;
}

namespace {

void check_config(const ClassifierConfig& c) {
  if (c.embed_dim == 0 || c.hidden_dim == 0 || c.num_classes < 2 || c.max_len == 0) {
    throw Error(ErrorCode::kConfig, "classifier config: dimensions must be positive and num_classes >= 2");
  }
}

void xavier(Tensor& w, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : w.data()) v = dist(rng);
}

}  // namespace

ClassifierModel ClassifierModel::zeros(Vocabulary vocab, const ClassifierConfig& config) {
  check_config(config);
  ClassifierModel m{std::move(vocab), config, {}};
  const std::size_t v = m.vocab.size(), d = config.embed_dim, h = config.hidden_dim, c = config.num_classes;
  m.params.embedding = Tensor({v, d});
  m.params.w1 = Tensor({d, h});
  m.params.b1 = Tensor({1, h});
  m.params.w2 = Tensor({h, h});
  m.params.b2 = Tensor({1, h});
  m.params.wc = Tensor({h, c});
  m.params.bc = Tensor({1, c});
  return m;
}

ClassifierModel ClassifierModel::initialize(Vocabulary vocab, const ClassifierConfig& config, std::uint64_t seed) {
  ClassifierModel m = zeros(std::move(vocab), config);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, config.init_scale / std::sqrt(static_cast<double>(config.embed_dim)));
  const std::size_t d = config.embed_dim;
  for (std::size_t r = 1; r < m.vocab.size(); ++r)
    for (std::size_t j = 0; j < d; ++j) m.params.embedding.at(r, j) = normal(rng);
  xavier(m.params.w1, rng);
  xavier(m.params.w2, rng);
  xavier(m.params.wc, rng);
  return m;
}

std::string ClassifierModel::id() const {
  Fnv1a h;
  h.u64(vocab.hash()).u64(config.embed_dim).u64(config.hidden_dim).u64(config.num_classes).u64(config.max_len);
  for (const Tensor* t : params.all())
    for (double v : t->data()) h.u64(std::bit_cast<std::uint64_t>(v));
  return hex64(h.value());
}

Tensor embed(const TokenSequence& seq, const ClassifierModel& model) {
  const std::size_t d = model.config.embed_dim;
  Tensor x({seq.tokens.size(), d});
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    const TokenId t = seq.tokens[i];
    if (t >= model.vocab.size()) {
      throw Error(ErrorCode::kInvalidArgument, "embed: token id " + std::to_string(t) + " out of range");
    }
    std::copy_n(&model.params.embedding.data()[t * d], d, &x.data()[i * d]);
  }
  return x;
}

ClassId ClassifierOutput::predicted() const {
  return static_cast<ClassId>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

// ------------------------------------------------------------------ session

ClassifierSession::ClassifierSession(const ClassifierModel& model) : model_(&model) {
  const auto& p = model.params;
  x_ = graph_.input("x");
  NodeId w1 = graph_.input("w1"), b1 = graph_.input("b1");
  NodeId w2 = graph_.input("w2"), b2 = graph_.input("b2");
  NodeId wc = graph_.input("wc"), bc = graph_.input("bc");
  target_ = graph_.input("target");
  NodeId pooled = graph_.mean(x_, 0);
  NodeId h1 = graph_.tanh(graph_.add(graph_.matmul(pooled, w1), b1));
  NodeId h2 = graph_.tanh(graph_.add(graph_.matmul(h1, w2), b2));
  logits_ = graph_.add(graph_.matmul(h2, wc), bc);
  probs_ = graph_.softmax(logits_);
  loss_ = graph_.sum(graph_.multiply(graph_.log(probs_), target_));
  graph_.set_output(loss_);
  param_nodes_ = {w1, b1, w2, b2, wc, bc};
  graph_.bind(w1, p.w1);
  graph_.bind(b1, p.b1);
  graph_.bind(w2, p.w2);
  graph_.bind(b2, p.b2);
  graph_.bind(wc, p.wc);
  graph_.bind(bc, p.bc);
  graph_.bind(x_, Tensor({1, model.config.embed_dim}));
  graph_.bind(target_, Tensor({1, model.config.num_classes}));
}

void ClassifierSession::reload_parameters() {
  const auto src = model_->params.all();
  for (std::size_t i = 0; i < param_nodes_.size(); ++i) graph_.bound(param_nodes_[i]) = *src[i + 1];
}

void ClassifierSession::run(const Tensor& x, ClassId label) {
  if (x.rank() != 2 || x.cols() != model_->config.embed_dim || x.rows() == 0) {
    throw Error(ErrorCode::kShape, "classifier: embedding input has shape " + shape_string(x.shape()) +
                                       ", expected [n," + std::to_string(model_->config.embed_dim) + "]");
  }
  if (!x.all_finite()) throw Error(ErrorCode::kNumeric, "classifier: embedding input is not finite");
  if (label >= model_->num_classes()) {
    throw Error(ErrorCode::kInvalidArgument, "classifier: label " + std::to_string(label) + " out of range");
  }
  graph_.bound(x_) = x;
  Tensor& target = graph_.bound(target_);
  target.fill(0.0);
  target[label] = -1.0;
  graph_.forward();
}

ClassifierOutput ClassifierSession::forward(const TokenSequence& seq) {
  return forward_from_embeddings(embed(seq, *model_));
}

ClassifierOutput ClassifierSession::forward_from_embeddings(const Tensor& x) {
  run(x, 0);
  const auto l = graph_.value(logits_).data();
  const auto p = graph_.value(probs_).data();
  return {{l.begin(), l.end()}, {p.begin(), p.end()}};
}

LossGradient ClassifierSession::loss_gradient(const Tensor& x, ClassId label) {
  run(x, label);
  graph_.backward();
  const auto p = graph_.value(probs_).data();
  return {graph_.value(loss_).item(), {p.begin(), p.end()}, graph_.gradient(x_)};
}

double ClassifierSession::accumulate_gradients(const TokenSequence& seq, const Tensor* delta,
                                               ClassifierParams& grads) {
  Tensor x = embed(seq, *model_);
  if (delta != nullptr) x = x + *delta;
  run(x, seq.label);
  graph_.backward();
  auto dst = grads.all();
  for (std::size_t i = 0; i < param_nodes_.size(); ++i) {
    const Tensor& g = graph_.gradient(param_nodes_[i]);
    Tensor& acc = *dst[i + 1];
    for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k];
  }
  const Tensor& gx = graph_.gradient(x_);
  const std::size_t d = model_->config.embed_dim;
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    double* row = &grads.embedding.data()[seq.tokens[i] * d];
    for (std::size_t j = 0; j < d; ++j) row[j] += gx[i * d + j];
  }
  return graph_.value(loss_).item();
}

ClassifierOutput forward(const ClassifierModel& model, const TokenSequence& seq) {
  ClassifierSession s(model);
  return s.forward(seq);
}

ClassifierOutput forward_from_embeddings(const ClassifierModel& model, const Tensor& x) {
  ClassifierSession s(model);
  return s.forward_from_embeddings(x);
}

double model_output_shift(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kShape, "model_output_shift: output sizes differ");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (!std::isfinite(diff + na + nb)) throw Error(ErrorCode::kNumeric, "model_output_shift: non-finite output");
  if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::kNumeric, "model_output_shift: zero-norm model output");
  return std::sqrt(diff) / (std::sqrt(na) * std::sqrt(nb));
}

// ----------------------------------------------------------------- training

double accuracy(const ClassifierModel& model, std::span<const TokenSequence> data) {
  if (data.empty()) return 0.0;
  ClassifierSession session(model);
  std::size_t correct = 0;
  for (const auto& s : data) correct += session.forward(s).predicted() == s.label;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

TrainResult train_impl(Vocabulary vocab, std::span<const TokenSequence> corpus, const ClassifierConfig& mcfg,
                       const TrainConfig& cfg, const AdvTrainConfig* adv) {
  std::vector<bool> seen(mcfg.num_classes, false);
  for (const auto& s : corpus) {
    if (s.label >= mcfg.num_classes) {
      throw Error(ErrorCode::kInvalidArgument, "train: label " + std::to_string(s.label) + " >= num_classes");
    }
    for (TokenId t : s.tokens)
      if (t >= vocab.size()) throw Error(ErrorCode::kInvalidArgument, "train: token id out of vocabulary");
    seen[s.label] = true;
  }
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    throw Error(ErrorCode::kInvalidArgument, "train: corpus must contain at least two classes");
  }
  if (cfg.batch_size == 0 || !(cfg.learning_rate > 0.0)) {
    throw Error(ErrorCode::kConfig, "train: batch_size and learning_rate must be positive");
  }
  if (adv && (adv->epsilon < 0.0 || !(adv->alpha > 0.0))) {
    throw Error(ErrorCode::kConfig, "adv train: epsilon must be >= 0 and alpha > 0");
  }

  TrainResult result{ClassifierModel::initialize(std::move(vocab), mcfg, cfg.seed), {}, 0.0};
  ClassifierModel& model = result.model;
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(cfg.test_fraction * static_cast<double>(corpus.size())));
  std::vector<TokenSequence> test;
  for (std::size_t i = 0; i < n_test; ++i) test.push_back(corpus[order[i]]);
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::vector<TokenSequence> validation;
  if (cfg.stop_accuracy > 0.0) {
    if (!(cfg.validation_fraction > 0.0 && cfg.validation_fraction < 1.0)) {
      throw Error(ErrorCode::kConfig, "train: stop_accuracy needs validation_fraction in (0,1)");
    }
    auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(train.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, train.size() - 1);
    for (std::size_t i = 0; i < n_val; ++i) validation.push_back(corpus[train[i]]);
    train.erase(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_val));
  }

  ClassifierSession session(model);
  ClassifierParams grads = model.params.zeros_like();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double loss_sum = 0.0, delta_sum = 0.0, delta_max = 0.0;
    try {
      for (std::size_t start = 0; start < train.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(train.size(), start + cfg.batch_size);
        for (Tensor* g : grads.all()) g->fill(0.0);
        for (std::size_t k = start; k < end; ++k) {
          const TokenSequence& s = corpus[train[k]];
          if (adv == nullptr) {
            loss_sum += session.accumulate_gradients(s, nullptr, grads);
            continue;
          }
          const Tensor x = embed(s, model);
          Tensor delta(x.shape());
          for (std::size_t t = 0; t < adv->steps; ++t) {
            LossGradient lg = session.loss_gradient(x + delta, s.label);
            const double gn = lg.grad.l2_norm();
            if (gn == 0.0) break;
            delta = project_l2(delta + (adv->alpha / gn) * lg.grad, adv->epsilon);
          }
          const double dn = delta.l2_norm();
          delta_sum += dn;
          delta_max = std::max(delta_max, dn);
          loss_sum += session.accumulate_gradients(s, &delta, grads);
        }
        const double scale = 1.0 / static_cast<double>(end - start);
        double norm2 = 0.0;
        for (Tensor* g : grads.all())
          for (double& v : g->data()) {
            v *= scale;
            norm2 += v * v;
          }
        const double norm = std::sqrt(norm2);
        const double clip = (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) ? cfg.clip_norm / norm : 1.0;
        auto params = model.params.all();
        auto gs = grads.all();
        for (std::size_t i = 0; i < params.size(); ++i)
          for (std::size_t k = 0; k < params[i]->size(); ++k) (*params[i])[k] -= cfg.learning_rate * clip * (*gs[i])[k];
        session.reload_parameters();
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumeric) throw;
      throw Error(ErrorCode::kNumeric, "training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = train.empty() ? 0.0 : loss_sum / static_cast<double>(train.size());
    if (!std::isfinite(log.train_loss)) {
      throw Error(ErrorCode::kNumeric, "training diverged at epoch " + std::to_string(epoch) + ": loss is NaN");
    }
    log.test_accuracy = accuracy(model, test.empty() ? std::span<const TokenSequence>(corpus) : test);
    log.mean_delta_norm = train.empty() ? 0.0 : delta_sum / static_cast<double>(train.size());
    log.max_delta_norm = delta_max;
    if (!validation.empty()) log.validation_accuracy = accuracy(model, validation);
    result.log.push_back(log);
    if (!validation.empty() && log.validation_accuracy >= cfg.stop_accuracy) break;
  }
  result.test_accuracy = accuracy(model, test.empty() ? std::span<const TokenSequence>(corpus) : test);
  return result;
}

}  // namespace

TrainResult train_classifier(Vocabulary vocab, std::span<const TokenSequence> corpus,
                             const ClassifierConfig& model_config, const TrainConfig& config) {
  return train_impl(std::move(vocab), corpus, model_config, config, nullptr);
}

TrainResult adv_train_classifier(Vocabulary vocab, std::span<const TokenSequence> corpus,
                                 const ClassifierConfig& model_config, const TrainConfig& config,
                                 const AdvTrainConfig& adv) {
  return train_impl(std::move(vocab), corpus, model_config, config, &adv);
}

// -------------------------------------------------------------- persistence

void save_classifier(const ClassifierModel& model, const std::string& path) {
  const auto& c = model.config;
  nlohmann::json header = {
      {"kind", "classifier"},
      {"model_id", model.id()},
      {"config",
       {{"embed_dim", c.embed_dim},
        {"hidden_dim", c.hidden_dim},
        {"num_classes", c.num_classes},
        {"max_len", c.max_len},
        {"init_scale", c.init_scale}}},
      {"vocab_hash", hex64(model.vocab.hash())},
      {"vocab", model.vocab.tokens()},
  };
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  const auto ps = model.params.all();
  for (std::size_t i = 0; i < ps.size(); ++i) tensors.emplace_back(ClassifierParams::names()[i], ps[i]);
  detail::write_model_file(path, std::move(header), tensors);
}

ClassifierModel load_classifier(const std::string& path) {
  auto mf = detail::read_model_file(path);
  const auto& h = mf.header;
  try {
    if (h.at("kind") != "classifier") throw Error(ErrorCode::kParse, path + ": not a classifier model");
    ClassifierConfig c;
    const auto& jc = h.at("config");
    c.embed_dim = jc.at("embed_dim");
    c.hidden_dim = jc.at("hidden_dim");
    c.num_classes = jc.at("num_classes");
    c.max_len = jc.at("max_len");
    c.init_scale = jc.value("init_scale", 1.0);
    auto tokens = h.at("vocab").get<std::vector<std::string>>();
    Vocabulary vocab = Vocabulary::from_tokens(tokens);
    if (hex64(vocab.hash()) != h.at("vocab_hash").get<std::string>()) {
      throw Error(ErrorCode::kMismatch, path + ": vocabulary hash mismatch");
    }
    ClassifierModel m = ClassifierModel::zeros(std::move(vocab), c);
    auto ps = m.params.all();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      *ps[i] = mf.take(ClassifierParams::names()[i], ps[i]->shape());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": bad header: " + e.what());
  }
}

}  // namespace pscore
