#pragma once

// Model file layout: one line of compact JSON (the header), a '\n', then the
// tensors listed in header["tensors"] as little-endian IEEE-754 doubles in
// listed order.

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "perturbscore/diffcore.hpp"

namespace pscore::detail {

void write_model_file(const std::string& path, nlohmann::json header,
                      const std::vector<std::pair<std::string, const Tensor*>>& tensors);

struct ModelFile {
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> tensors;

  Tensor take(const std::string& name, const Shape& expected);
};

ModelFile read_model_file(const std::string& path);

}  // namespace pscore::detail
