#include "ibakit/attribution.hpp"

#include <algorithm>
#include <cmath>

#include "ibakit/error.hpp"

namespace ibakit {

nlohmann::json to_json(const AttributionMap& map) {
  return {{"method", map.method}, {"layer", map.layer},   {"beta", map.beta},
          {"tokens", map.tokens}, {"scores", map.scores}, {"target", map.target},
          {"seed", map.seed}};
}

void validate_attribution_json(const nlohmann::json& j) {
  auto fail = [](const std::string& why) { throw InputError("attribution map: " + why); };
  if (!j.is_object()) fail("not a JSON object");
  for (const char* key : {"method", "layer", "beta", "tokens", "scores", "target", "seed"}) {
    if (!j.contains(key)) fail(std::string("missing field '") + key + "'");
  }
  if (!j["method"].is_string()) fail("'method' must be a string");
  const auto& methods = attribution_methods();
  if (std::find(methods.begin(), methods.end(), j["method"].get<std::string>()) == methods.end()) {
    fail("unknown method '" + j["method"].get<std::string>() + "'");
  }
  if (!j["layer"].is_number_integer()) fail("'layer' must be an integer");
  if (!j["beta"].is_number() || j["beta"].get<double>() < 0.0) fail("'beta' must be a number >= 0");
  if (!j["target"].is_number_integer() || j["target"].get<long long>() < 0) {
    fail("'target' must be an integer >= 0");
  }
  if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<long long>() >= 0)) {
    fail("'seed' must be a non-negative integer");
  }
  if (!j["tokens"].is_array() || !j["scores"].is_array()) fail("'tokens' and 'scores' must be arrays");
  if (j["tokens"].size() != j["scores"].size()) fail("'tokens' and 'scores' differ in length");
  if (j["tokens"].empty()) fail("no tokens");
  for (const auto& t : j["tokens"]) {
    if (!t.is_string()) fail("'tokens' must hold strings");
  }
  for (const auto& s : j["scores"]) {
    if (!s.is_number() || !std::isfinite(s.get<double>())) fail("'scores' must hold finite numbers");
  }
}

AttributionMap attribution_from_json(const nlohmann::json& j) {
  validate_attribution_json(j);
  AttributionMap m;
  m.method = j["method"].get<std::string>();
  m.layer = j["layer"].get<int>();
  m.beta = j["beta"].get<double>();
  m.tokens = j["tokens"].get<std::vector<std::string>>();
  m.scores = j["scores"].get<std::vector<double>>();
  m.target = j["target"].get<int>();
  m.seed = j["seed"].get<std::uint64_t>();
  return m;
}

}  // namespace ibakit
