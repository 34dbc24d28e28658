#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ibakit/baselines.hpp"
#include "ibakit/error.hpp"
#include "ibakit/evaluation.hpp"
#include "ibakit/iba.hpp"
#include "ibakit/model.hpp"
#include "ibakit/train.hpp"
#include "json.hpp"

namespace ibakit::cli {

// Bad flags, bad config values, unknown names. Exit code 2.
class UsageError : public InputError {
 public:
  using InputError::InputError;
};

enum Command : unsigned {
  kGenCorpus = 1u << 0,
  kTrain = 1u << 1,
  kAttribute = 1u << 2,
  kDegrade = 1u << 3,
  kSweep = 1u << 4,
};

Command parse_command(const std::string& name);
std::string command_name(Command cmd);

struct RunConfig {
  RunConfig() { methods.seed = train.seed = 1; }

  std::string corpus;
  std::string checkpoint;
  std::string out;
  std::string heatmap;

  std::size_t size = 2000;           // gen-corpus
  std::uint64_t split_seed = 7;      // train/validation/test shuffle
  std::size_t n_eval = 200;          // test instances used by attribute/degrade/sweep, 0 = all
  std::size_t calibration = 0;       // training instances for noise statistics, 0 = all

  ModelConfig model;
  TrainConfig train;
  MethodSettings methods;            // iba, ig, lime-lite, random settings plus the global seed
  std::vector<std::string> method = {"iba", "ig", "lime-lite", "random"};
  std::vector<double> fractions = default_fraction_grid();
  TargetMode target = TargetMode::kGold;
  RemovalMode removal = RemovalMode::kDelete;
  std::size_t jobs = 1;

  // attribute
  long index = 0;                    // into the evaluation split; ignored with text
  std::string text;
  int label = -1;                    // gold label for text, -1 = none

  // sweep
  std::string axis = "layer";
  std::string values;                // empty = 0..n_layers or the default beta ladder
};

struct KeyInfo {
  std::string key;
  std::string help;
  unsigned commands;
};

// Every key accepted in a config file or as --key (underscores become dashes).
const std::vector<KeyInfo>& config_keys();

// Sets one key from its textual value. UsageError on unknown keys or bad values.
void set_key(RunConfig& cfg, const std::string& key, const std::string& value);

// Flat "key = value" lines; '#' starts a comment line; blank lines ignored.
// Duplicate or unknown keys are UsageErrors naming the line.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> read_config_file(const std::string& path);

// Defaults, then file entries, then flags; validates the result for `cmd`.
RunConfig resolve(Command cmd, const std::map<std::string, std::string>& file,
                  const std::map<std::string, std::string>& flags);

// The keys relevant to `cmd` with their resolved values.
nlohmann::json resolved_json(const RunConfig& cfg, Command cmd);
// "<key> = <value>" lines of resolved_json, same order.
std::vector<std::string> resolved_lines(const RunConfig& cfg, Command cmd);

// Shortest text that parses back to the same double.
std::string format_number(double v);

}  // namespace ibakit::cli
