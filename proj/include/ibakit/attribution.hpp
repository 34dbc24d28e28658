#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace ibakit {

// Per-token relevance for one instance. tokens[0] is "[CLS]": it carries a
// score but is never removed by the degradation test. Methods without a
// layer or beta report layer -1 and beta 0.
struct AttributionMap {
  std::string method;
  int layer = -1;
  double beta = 0.0;
  std::vector<std::string> tokens;
  std::vector<double> scores;
  int target = 0;
  std::uint64_t seed = 0;
};

inline const std::vector<std::string>& attribution_methods() {
  static const std::vector<std::string> m = {"iba", "ig", "lime-lite", "random"};
  return m;
}

nlohmann::json to_json(const AttributionMap& map);
// Validates first; throws InputError naming the offending field.
AttributionMap attribution_from_json(const nlohmann::json& j);
// Schema: object with method (one of attribution_methods()), layer (int),
// beta (number >= 0), tokens (string array), scores (finite numbers, same
// length as tokens, at least one), target (int >= 0), seed (unsigned int).
void validate_attribution_json(const nlohmann::json& j);

}  // namespace ibakit
