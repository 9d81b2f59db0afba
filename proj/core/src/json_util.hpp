#pragma once

#include <json.hpp>
#include <string>

#include "ctrlsynth/error.hpp"
#include "ctrlsynth/tensor.hpp"

namespace ctrlsynth::detail {

using Json = nlohmann::json;

inline Json tensor_to_json(const Tensor& t) {
  return Json{{"shape", Json::array({t.rows(), t.cols()})}, {"values", t.storage()}};
}

inline Tensor tensor_from_json(const Json& j, const std::string& what) {
  try {
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    auto values = j.at("values").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] * shape[1] != values.size()) {
      throw CorruptFileError(what + ": shape does not match value count");
    }
    return Tensor::matrix(shape[0], shape[1], std::move(values));
  } catch (const Json::exception& e) {
    throw CorruptFileError(what + ": " + e.what());
  }
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw CorruptFileError(what + " is not valid JSON: " + e.what());
  }
}

}  // namespace ctrlsynth::detail
