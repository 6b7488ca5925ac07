#include "model_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>

#include "perturbscore/error.hpp"

namespace pscore::detail {

using nlohmann::json;

void write_model_file(const std::string& path, json header,
                      const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  json list = json::array();
  for (const auto& [name, t] : tensors) list.push_back({{"name", name}, {"shape", t->shape()}});
  header["tensors"] = std::move(list);
  header["encoding"] = "f64le";

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open '" + path + "' for writing");
  out << header.dump() << '\n';
  std::string buf;
  for (const auto& [name, t] : tensors) {
    buf.clear();
    buf.reserve(t->size() * 8);
    for (double v : t->data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw Error(ErrorCode::kIo, "write to '" + path + "' failed");
}

ModelFile read_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open model file '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kParse, path + ": missing header");
  ModelFile mf;
  try {
    mf.header = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, path + ": malformed header: " + e.what());
  }
  if (mf.header.value("encoding", "") != "f64le" || !mf.header.contains("tensors")) {
    throw Error(ErrorCode::kParse, path + ": header lacks tensor table");
  }
  std::string payload((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t offset = 0;
  for (const auto& entry : mf.header["tensors"]) {
    Shape shape = entry.at("shape").get<Shape>();
    Tensor t(shape);
    if (offset + t.size() * 8 > payload.size()) {
      throw Error(ErrorCode::kParse, path + ": truncated payload at tensor '" +
                                         entry.at("name").get<std::string>() + "'");
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(payload[offset + 8 * i + b])) << (8 * b);
      }
      t[i] = std::bit_cast<double>(bits);
    }
    offset += t.size() * 8;
    mf.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  if (offset != payload.size()) throw Error(ErrorCode::kParse, path + ": trailing bytes after payload");
  return mf;
}

Tensor ModelFile::take(const std::string& name, const Shape& expected) {
  for (auto& [n, t] : tensors) {
    if (n != name) continue;
    if (t.shape() != expected) {
      throw Error(ErrorCode::kShape, "model tensor '" + name + "' has shape " + shape_string(t.shape()) +
                                         ", expected " + shape_string(expected));
    }
    if (!t.all_finite()) throw Error(ErrorCode::kNumeric, "model tensor '" + name + "' is not finite");
    return std::move(t);
  }
  throw Error(ErrorCode::kParse, "model file lacks tensor '" + name + "'");
}

}  // namespace pscore::detail
