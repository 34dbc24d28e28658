#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "ibakit/attribution.hpp"
#include "json.hpp"
#include "run_config.hpp"

namespace ibakit::cli {

// Each command writes its artifacts and a short summary to `log`.
void cmd_gen_corpus(const RunConfig& cfg, std::ostream& log);
void cmd_train(const RunConfig& cfg, std::ostream& log);
void cmd_attribute(const RunConfig& cfg, std::ostream& log);
void cmd_degrade(const RunConfig& cfg, std::ostream& log);
void cmd_sweep(const RunConfig& cfg, std::ostream& log);

// Standalone page; each token is a span with data-score (raw) and
// data-norm (per-instance min-max, 0 when all scores are equal).
std::string render_heatmap(const AttributionMap& map, const nlohmann::json& provenance);

// Parses argv (program name first) and dispatches. Returns the exit code:
// 0 success, 1 runtime failure, 2 usage error. Failures print one
// "error: ..." line to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ibakit::cli
