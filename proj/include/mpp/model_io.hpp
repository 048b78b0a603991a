#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "mpp/model.hpp"

namespace mpp {

/// Malformed model file. `field` is a JSON path such as "jumps[1].rate";
/// `line` is set for syntax errors.
class ModelParseError : public ModelError {
 public:
  ModelParseError(const std::string& msg, std::string field, int line = 0)
      : ModelError(msg), field_(std::move(field)), line_(line) {}
  const std::string& field() const { return field_; }
  int line() const { return line_; }

 private:
  std::string field_;
  int line_;
};

/// Object {name, d, d1, N, x0, jumps:[{J, s, rate:{monomials:[{coeff, powers}]}}]}.
/// Unknown fields are rejected; s is a 0-based coordinate index or null.
PopulationModel parse_model_json(std::string_view text);
PopulationModel load_model(const std::filesystem::path& path);
nlohmann::json model_to_json(const PopulationModel& model);

}  // namespace mpp
