#include "perturbscore/tuplestore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "perturbscore/error.hpp"
#include "perturbscore/hash.hpp"

namespace pscore {

using nlohmann::json;

std::vector<TokenId> encode_scorer_input(const TokenSequence& s, const Perturbation& p, std::size_t max_len) {
  check_perturbation(s, p);
  std::vector<TokenId> out;
  out.reserve(s.size() + 3 * p.size());
  std::size_t next = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    out.push_back(s.tokens[i]);
    if (next < p.edits.size() && p.edits[next].position == i) {
      out.push_back(Vocabulary::kOpen);
      out.push_back(p.edits[next].replacement);
      out.push_back(Vocabulary::kClose);
      if (out.size() > max_len) {
        throw Error(ErrorCode::kInvalidArgument, "encode_scorer_input: truncation to " + std::to_string(max_len) +
                                                     " would drop an edit marker");
      }
      ++next;
    }
  }
  if (out.size() > max_len) out.resize(max_len);
  return out;
}

DecodedInput decode_scorer_input(std::span<const TokenId> ids) {
  DecodedInput d;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TokenId t = ids[i];
    if (t == Vocabulary::kClose) throw Error(ErrorCode::kParse, "decode: unbalanced ']'");
    if (t != Vocabulary::kOpen) {
      d.tokens.push_back(t);
      continue;
    }
    if (d.tokens.empty() || i + 2 >= ids.size() || ids[i + 2] != Vocabulary::kClose ||
        ids[i + 1] == Vocabulary::kOpen || ids[i + 1] == Vocabulary::kClose) {
      throw Error(ErrorCode::kParse, "decode: '[' must follow a token and wrap exactly one replacement");
    }
    const std::size_t pos = d.tokens.size() - 1;
    if (!d.edits.empty() && d.edits.back().position == pos) {
      throw Error(ErrorCode::kParse, "decode: two replacements for one token");
    }
    d.edits.push_back({pos, d.tokens.back(), ids[i + 1]});
    i += 2;
  }
  return d;
}

json perturbation_to_json(const Perturbation& p, const Vocabulary& vocab) {
  json edits = json::array();
  for (const Edit& e : p.edits) edits.push_back({e.position, vocab.token(e.original), vocab.token(e.replacement)});
  return {{"text_hash", hex64(p.parent_hash)}, {"method", method_name(p.method)}, {"edits", std::move(edits)}};
}

namespace {

TokenId known_token(const Vocabulary& vocab, const std::string& tok) {
  if (!vocab.contains(tok)) {
    throw Error(ErrorCode::kMismatch, "token '" + tok + "' is not in the model vocabulary");
  }
  return vocab.id(tok);
}

}  // namespace

Perturbation perturbation_from_json(const json& j, const Vocabulary& vocab) {
  Perturbation p;
  p.parent_hash = parse_hex64(j.at("text_hash").get<std::string>());
  p.method = parse_method(j.at("method").get<std::string>());
  for (const auto& e : j.at("edits")) {
    if (!e.is_array() || e.size() != 3) throw Error(ErrorCode::kParse, "edit must be [position, original, replacement]");
    p.edits.push_back({e[0].get<std::size_t>(), known_token(vocab, e[1].get<std::string>()),
                       known_token(vocab, e[2].get<std::string>())});
  }
  if (p.edits.empty()) throw Error(ErrorCode::kParse, "perturbation has no edits");
  return p;
}

json tuple_to_json(const DataTuple& t, const Vocabulary& vocab) {
  json j = perturbation_to_json(t.perturbation, vocab);
  j["label"] = t.label;
  j["epsilon"] = t.epsilon;
  j["gamma"] = t.gamma;
  j["achieved_shift"] = t.achieved_shift;
  j["status"] = status_name(t.status);
  j["seed"] = t.seed;
  j["edit_distance"] = t.edit_distance;
  j["similarity_proxy"] = t.similarity;
  return j;
}

DataTuple tuple_from_json(const json& j, const Vocabulary& vocab) {
  DataTuple t;
  t.perturbation = perturbation_from_json(j, vocab);
  t.text_hash = t.perturbation.parent_hash;
  t.label = j.value("label", 0u);
  t.epsilon = j.at("epsilon").get<double>();
  t.gamma = j.at("gamma").get<double>();
  t.achieved_shift = j.at("achieved_shift").get<double>();
  t.status = parse_status(j.at("status").get<std::string>());
  t.seed = j.at("seed").get<std::uint64_t>();
  t.edit_distance = j.value("edit_distance", t.perturbation.size());
  t.similarity = j.value("similarity_proxy", 1.0);
  return t;
}

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  std::vector<json> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, path + ":" + std::to_string(lineno) + ": malformed record: " + e.what());
    }
  }
  return out;
}

void write_jsonl(const std::string& path, std::span<const json> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write to '" + path + "' failed");
}

namespace {

template <typename T, typename F>
std::vector<T> read_records(const std::string& path, F&& convert) {
  const auto rows = read_jsonl(path);
  std::vector<T> out;
  out.reserve(rows.size());
  std::size_t index = 0;
  for (const auto& row : rows) {
    ++index;
    try {
      out.push_back(convert(row));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::kParse, path + ": record " + std::to_string(index) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), path + ": record " + std::to_string(index) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace

std::vector<Perturbation> read_perturbations(const std::string& path, const Vocabulary& vocab) {
  return read_records<Perturbation>(path, [&](const json& j) { return perturbation_from_json(j, vocab); });
}

void write_perturbations(const std::string& path, std::span<const Perturbation> ps, const Vocabulary& vocab) {
  std::vector<json> rows;
  rows.reserve(ps.size());
  for (const auto& p : ps) rows.push_back(perturbation_to_json(p, vocab));
  write_jsonl(path, rows);
}

std::vector<DataTuple> read_tuples(const std::string& path, const Vocabulary& vocab) {
  return read_records<DataTuple>(path, [&](const json& j) { return tuple_from_json(j, vocab); });
}

void write_tuples(const std::string& path, std::span<const DataTuple> tuples, const Vocabulary& vocab) {
  std::vector<json> rows;
  rows.reserve(tuples.size());
  for (const auto& t : tuples) rows.push_back(tuple_to_json(t, vocab));
  write_jsonl(path, rows);
}

std::vector<DataTuple> dedupe_tuples(std::span<const DataTuple> tuples) {
  std::set<std::pair<std::uint64_t, std::vector<std::tuple<std::size_t, TokenId, TokenId>>>> seen;
  std::vector<DataTuple> out;
  for (const auto& t : tuples) {
    std::vector<std::tuple<std::size_t, TokenId, TokenId>> key;
    for (const Edit& e : t.perturbation.edits) key.emplace_back(e.position, e.original, e.replacement);
    if (seen.emplace(t.text_hash, std::move(key)).second) out.push_back(t);
  }
  return out;
}

TupleSplit split_dataset(std::span<const DataTuple> tuples, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorCode::kInvalidArgument, "split: ratio must be in (0,1)");
  std::vector<std::uint64_t> hashes;
  for (const auto& t : tuples) hashes.push_back(t.text_hash);
  std::sort(hashes.begin(), hashes.end());
  hashes.erase(std::unique(hashes.begin(), hashes.end()), hashes.end());
  if (hashes.size() < 2) throw Error(ErrorCode::kInvalidArgument, "split: need at least 2 distinct texts");
  std::mt19937_64 rng(seed);
  std::shuffle(hashes.begin(), hashes.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(hashes.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, hashes.size() - 1);
  const std::set<std::uint64_t> train_set(hashes.begin(), hashes.begin() + static_cast<std::ptrdiff_t>(n_train));
  TupleSplit split;
  for (const auto& t : tuples) (train_set.count(t.text_hash) ? split.train : split.test).push_back(t);
  return split;
}

ScorerDataset build_scorer_dataset(std::span<const DataTuple> tuples,
                                   const std::unordered_map<std::uint64_t, TokenSequence>& texts,
                                   const Vocabulary& vocab, std::size_t max_len, std::string tag) {
  ScorerDataset ds;
  ds.vocab_hash = vocab.hash();
  ds.tag = std::move(tag);
  for (const auto& t : tuples) {
    if (!t.accepted()) continue;
    auto it = texts.find(t.text_hash);
    if (it == texts.end()) {
      throw Error(ErrorCode::kMismatch, "scorer dataset: no text with hash " + hex64(t.text_hash));
    }
    ScorerExample ex;
    try {
      ex.input = encode_scorer_input(it->second, t.perturbation, max_len);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kInvalidArgument) throw;
      ++ds.rejected;
      continue;
    }
    ex.target = t.epsilon;
    ex.text_hash = t.text_hash;
    ex.method = t.perturbation.method;
    ex.edit_distance = t.edit_distance;
    ex.similarity = t.similarity;
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": " + e.what());
  }
}

}  // namespace pscore
