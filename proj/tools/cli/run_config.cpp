#include "run_config.hpp"

#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>

#include "ibakit/error.hpp"

namespace ibakit::cli {

namespace {

constexpr unsigned kData = kAttribute | kDegrade | kSweep;
constexpr unsigned kAll = kGenCorpus | kTrain | kData;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& want) {
  throw UsageError("config key '" + key + "': '" + value + "' is not " + want);
}

double to_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0' || errno == ERANGE) bad_value(key, v, "a number");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const long long i = std::strtoll(v.c_str(), &end, 10);
  if (v.empty() || *end != '\0' || errno == ERANGE) bad_value(key, v, "an integer");
  return i;
}

std::size_t to_count(const std::string& key, const std::string& v) {
  const long long i = to_int(key, v);
  if (i < 0) bad_value(key, v, "a non-negative integer");
  return static_cast<std::size_t>(i);
}

std::uint64_t to_seed(const std::string& key, const std::string& v) {
  if (v.empty() || v[0] == '-') bad_value(key, v, "an unsigned integer");
  errno = 0;
  char* end = nullptr;
  const unsigned long long u = std::strtoull(v.c_str(), &end, 10);
  if (*end != '\0' || errno == ERANGE) bad_value(key, v, "an unsigned integer");
  return u;
}

int to_small_int(const std::string& key, const std::string& v) {
  const long long i = to_int(key, v);
  if (i < std::numeric_limits<int>::min() || i > std::numeric_limits<int>::max()) bad_value(key, v, "an int");
  return static_cast<int>(i);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? "," : "") + items[i];
  return s;
}

// Rethrows library InputErrors from parse helpers as usage errors.
template <class F>
auto as_usage(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const InputError& e) {
    throw UsageError("config key '" + key + "': " + e.what());
  }
}

struct KeyDef {
  KeyInfo info;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<nlohmann::json(const RunConfig&)> get;
};

const std::vector<KeyDef>& key_defs() {
  using J = nlohmann::json;
  static const std::vector<KeyDef> defs = {
      {{"corpus", "corpus file (one JSON object per line)", kTrain | kData},
       [](RunConfig& c, const std::string& v) { c.corpus = v; }, [](const RunConfig& c) { return J(c.corpus); }},
      {{"checkpoint", "model checkpoint path (written by train, read otherwise)", kTrain | kData},
       [](RunConfig& c, const std::string& v) { c.checkpoint = v; },
       [](const RunConfig& c) { return J(c.checkpoint); }},
      {{"out", "output file for gen-corpus, output directory otherwise", kAll},
       [](RunConfig& c, const std::string& v) { c.out = v; }, [](const RunConfig& c) { return J(c.out); }},
      {{"heatmap", "HTML heatmap path for attribute (empty = none)", kAttribute},
       [](RunConfig& c, const std::string& v) { c.heatmap = v; }, [](const RunConfig& c) { return J(c.heatmap); }},
      {{"size", "number of generated examples", kGenCorpus},
       [](RunConfig& c, const std::string& v) { c.size = to_count("size", v); },
       [](const RunConfig& c) { return J(c.size); }},
      {{"seed", "global seed (generation, training init, attribution noise)", kAll},
       [](RunConfig& c, const std::string& v) {
         c.methods.seed = to_seed("seed", v);
         c.train.seed = c.methods.seed;
       },
       [](const RunConfig& c) { return J(c.methods.seed); }},
      {{"split_seed", "seed of the 80/10/10 train/validation/test split", kTrain | kData},
       [](RunConfig& c, const std::string& v) { c.split_seed = to_seed("split_seed", v); },
       [](const RunConfig& c) { return J(c.split_seed); }},
      {{"n_eval", "test instances to evaluate, 0 = all", kDegrade | kSweep},
       [](RunConfig& c, const std::string& v) { c.n_eval = to_count("n_eval", v); },
       [](const RunConfig& c) { return J(c.n_eval); }},
      {{"calibration", "training instances for noise statistics, 0 = all", kData},
       [](RunConfig& c, const std::string& v) { c.calibration = to_count("calibration", v); },
       [](const RunConfig& c) { return J(c.calibration); }},
      {{"d_model", "model width", kTrain},
       [](RunConfig& c, const std::string& v) { c.model.d_model = to_count("d_model", v); },
       [](const RunConfig& c) { return J(c.model.d_model); }},
      {{"n_layers", "encoder blocks", kTrain},
       [](RunConfig& c, const std::string& v) { c.model.n_layers = to_count("n_layers", v); },
       [](const RunConfig& c) { return J(c.model.n_layers); }},
      {{"n_heads", "attention heads", kTrain},
       [](RunConfig& c, const std::string& v) { c.model.n_heads = to_count("n_heads", v); },
       [](const RunConfig& c) { return J(c.model.n_heads); }},
      {{"d_ff", "feed-forward width", kTrain},
       [](RunConfig& c, const std::string& v) { c.model.d_ff = to_count("d_ff", v); },
       [](const RunConfig& c) { return J(c.model.d_ff); }},
      {{"max_seq_len", "tokens per instance including [CLS]", kTrain},
       [](RunConfig& c, const std::string& v) { c.model.max_seq_len = to_count("max_seq_len", v); },
       [](const RunConfig& c) { return J(c.model.max_seq_len); }},
      {{"epochs", "training epochs", kTrain},
       [](RunConfig& c, const std::string& v) { c.train.epochs = to_small_int("epochs", v); },
       [](const RunConfig& c) { return J(c.train.epochs); }},
      {{"batch", "mini-batch size", kTrain},
       [](RunConfig& c, const std::string& v) { c.train.batch = to_count("batch", v); },
       [](const RunConfig& c) { return J(c.train.batch); }},
      {{"train_lr", "SGD learning rate", kTrain},
       [](RunConfig& c, const std::string& v) { c.train.lr = to_double("train_lr", v); },
       [](const RunConfig& c) { return J(c.train.lr); }},
      {{"momentum", "SGD momentum", kTrain},
       [](RunConfig& c, const std::string& v) { c.train.momentum = to_double("momentum", v); },
       [](const RunConfig& c) { return J(c.train.momentum); }},
      {{"max_vocab", "vocabulary cap including reserved tokens", kTrain},
       [](RunConfig& c, const std::string& v) { c.train.max_vocab = to_count("max_vocab", v); },
       [](const RunConfig& c) { return J(c.train.max_vocab); }},
      {{"method", "attribution method(s): iba, ig, lime-lite, random (comma list for degrade)",
        kAttribute | kDegrade},
       [](RunConfig& c, const std::string& v) { c.method = split_list(v); },
       [](const RunConfig& c) { return J(join(c.method)); }},
      {{"layer", "bottleneck layer (0 = after embeddings)", kData},
       [](RunConfig& c, const std::string& v) { c.methods.iba.layer = to_count("layer", v); },
       [](const RunConfig& c) { return J(c.methods.iba.layer); }},
      {{"beta", "bottleneck trade-off weight", kData},
       [](RunConfig& c, const std::string& v) { c.methods.iba.beta = to_double("beta", v); },
       [](const RunConfig& c) { return J(c.methods.iba.beta); }},
      {{"auto_beta", "replace beta by 10 * CE / KL at initialization", kData},
       [](RunConfig& c, const std::string& v) { c.methods.iba.auto_beta = to_bool("auto_beta", v); },
       [](const RunConfig& c) { return J(c.methods.iba.auto_beta); }},
      {{"steps", "bottleneck optimization steps", kData},
       [](RunConfig& c, const std::string& v) { c.methods.iba.steps = to_small_int("steps", v); },
       [](const RunConfig& c) { return J(c.methods.iba.steps); }},
      {{"lr", "bottleneck learning rate", kData},
       [](RunConfig& c, const std::string& v) { c.methods.iba.lr = to_double("lr", v); },
       [](const RunConfig& c) { return J(c.methods.iba.lr); }},
      {{"duplicates", "noise samples per bottleneck step", kData},
       [](RunConfig& c, const std::string& v) { c.methods.iba.duplicates = to_small_int("duplicates", v); },
       [](const RunConfig& c) { return J(c.methods.iba.duplicates); }},
      {{"alpha_init", "initial bottleneck logit", kData},
       [](RunConfig& c, const std::string& v) { c.methods.iba.alpha_init = to_double("alpha_init", v); },
       [](const RunConfig& c) { return J(c.methods.iba.alpha_init); }},
      {{"optimizer", "bottleneck optimizer: gd or adam", kData},
       [](RunConfig& c, const std::string& v) {
         c.methods.iba.optimizer = as_usage("optimizer", [&] { return parse_optimizer(v); });
       },
       [](const RunConfig& c) { return J(optimizer_name(c.methods.iba.optimizer)); }},
      {{"stats_mode", "noise statistics: per-feature or per-position", kData},
       [](RunConfig& c, const std::string& v) {
         c.methods.stats_mode = as_usage("stats_mode", [&] { return parse_stats_mode(v); });
       },
       [](const RunConfig& c) { return J(stats_mode_name(c.methods.stats_mode)); }},
      {{"ig_steps", "integrated-gradients path steps", kData},
       [](RunConfig& c, const std::string& v) { c.methods.ig.steps = to_small_int("ig_steps", v); },
       [](const RunConfig& c) { return J(c.methods.ig.steps); }},
      {{"lime_samples", "surrogate perturbation samples", kData},
       [](RunConfig& c, const std::string& v) { c.methods.lime.n_samples = to_small_int("lime_samples", v); },
       [](const RunConfig& c) { return J(c.methods.lime.n_samples); }},
      {{"lime_mask_prob", "surrogate per-word drop probability", kData},
       [](RunConfig& c, const std::string& v) { c.methods.lime.mask_prob = to_double("lime_mask_prob", v); },
       [](const RunConfig& c) { return J(c.methods.lime.mask_prob); }},
      {{"lime_ridge", "surrogate ridge penalty", kData},
       [](RunConfig& c, const std::string& v) { c.methods.lime.ridge = to_double("lime_ridge", v); },
       [](const RunConfig& c) { return J(c.methods.lime.ridge); }},
      {{"target", "explained class: gold or pred", kData},
       [](RunConfig& c, const std::string& v) {
         c.target = as_usage("target", [&] { return parse_target_mode(v); });
       },
       [](const RunConfig& c) { return J(target_mode_name(c.target)); }},
      {{"fractions", "comma-separated removal fractions from 0 to 1", kDegrade | kSweep},
       [](RunConfig& c, const std::string& v) {
         c.fractions = as_usage("fractions", [&] { return parse_fraction_grid(v); });
       },
       [](const RunConfig& c) {
         std::vector<std::string> parts;
         for (double f : c.fractions) parts.push_back(format_number(f));
         return J(join(parts));
       }},
      {{"removal", "how removed tokens vanish: delete or unk", kDegrade | kSweep},
       [](RunConfig& c, const std::string& v) {
         c.removal = as_usage("removal", [&] { return parse_removal_mode(v); });
       },
       [](const RunConfig& c) { return J(removal_mode_name(c.removal)); }},
      {{"jobs", "worker threads (results do not depend on it)", kTrain | kData},
       [](RunConfig& c, const std::string& v) {
         c.jobs = to_count("jobs", v);
         c.train.jobs = c.jobs;
       },
       [](const RunConfig& c) { return J(c.jobs); }},
      {{"index", "test-split instance to explain", kAttribute},
       [](RunConfig& c, const std::string& v) { c.index = static_cast<long>(to_int("index", v)); },
       [](const RunConfig& c) { return J(c.index); }},
      {{"text", "explain this sentence instead of a test instance", kAttribute},
       [](RunConfig& c, const std::string& v) { c.text = v; }, [](const RunConfig& c) { return J(c.text); }},
      {{"label", "gold label of text (-1 = unknown)", kAttribute},
       [](RunConfig& c, const std::string& v) { c.label = to_small_int("label", v); },
       [](const RunConfig& c) { return J(c.label); }},
      {{"axis", "sweep axis: layer or beta", kSweep},
       [](RunConfig& c, const std::string& v) { c.axis = v; }, [](const RunConfig& c) { return J(c.axis); }},
      {{"values", "comma-separated sweep values (empty = default ladder)", kSweep},
       [](RunConfig& c, const std::string& v) { c.values = v; }, [](const RunConfig& c) { return J(c.values); }},
  };
  return defs;
}

const KeyDef* find_key(const std::string& key) {
  for (const auto& d : key_defs())
    if (d.info.key == key) return &d;
  return nullptr;
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw UsageError(msg);
}

}  // namespace

Command parse_command(const std::string& name) {
  if (name == "gen-corpus") return kGenCorpus;
  if (name == "train") return kTrain;
  if (name == "attribute") return kAttribute;
  if (name == "degrade") return kDegrade;
  if (name == "sweep") return kSweep;
  throw UsageError("unknown command '" + name + "'");
}

std::string command_name(Command cmd) {
  switch (cmd) {
    case kGenCorpus: return "gen-corpus";
    case kTrain: return "train";
    case kAttribute: return "attribute";
    case kDegrade: return "degrade";
    case kSweep: return "sweep";
  }
  return "?";
}

const std::vector<KeyInfo>& config_keys() {
  static const std::vector<KeyInfo> keys = [] {
    std::vector<KeyInfo> k;
    for (const auto& d : key_defs()) k.push_back(d.info);
    return k;
  }();
  return keys;
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  const KeyDef* d = find_key(key);
  if (!d) throw UsageError("unknown config key '" + key + "'");
  d->set(cfg, value);
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = "config line " + std::to_string(lineno);
    require(eq != std::string::npos, where + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    require(find_key(key) != nullptr, where + ": unknown key '" + key + "'");
    require(out.count(key) == 0, where + ": duplicate key '" + key + "'");
    out.emplace(key, trim(t.substr(eq + 1)));
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str());
}

RunConfig resolve(Command cmd, const std::map<std::string, std::string>& file,
                  const std::map<std::string, std::string>& flags) {
  RunConfig cfg;
  for (const auto* src : {&file, &flags}) {
    for (const auto& [k, v] : *src) {
      const KeyDef* d = find_key(k);
      if (!d) throw UsageError("unknown config key '" + k + "'");
      // config files may be shared across commands; only flags must fit the command
      if (src == &flags && (d->info.commands & cmd) == 0) {
        throw UsageError("option --" + k + " does not apply to " + command_name(cmd));
      }
      d->set(cfg, v);
    }
  }

  require(!cfg.out.empty(), "missing --out");
  if (cmd & (kTrain | kData)) {
    require(!cfg.corpus.empty(), "missing --corpus");
    require(!cfg.checkpoint.empty(), "missing --checkpoint");
  }
  if (cmd == kGenCorpus) require(cfg.size > 0, "size must be >= 1");
  if (cmd == kTrain) {
    require(cfg.train.epochs >= 0, "epochs must be >= 0");
    require(cfg.train.batch >= 1, "batch must be >= 1");
    require(cfg.train.lr > 0.0, "train_lr must be > 0");
    require(cfg.model.n_heads >= 1 && cfg.model.d_model % cfg.model.n_heads == 0,
            "d_model must be a multiple of n_heads");
  }
  if (cmd & kData) {
    as_usage("beta", [&] { cfg.methods.iba.validate(); });
    as_usage("ig_steps", [&] { cfg.methods.ig.validate(); });
    require(cfg.methods.lime.n_samples >= 1, "lime_samples must be >= 1");
    require(cfg.methods.lime.mask_prob > 0.0 && cfg.methods.lime.mask_prob < 1.0,
            "lime_mask_prob must be in (0,1)");
    require(cfg.methods.lime.ridge >= 0.0, "lime_ridge must be >= 0");
  }
  if (cmd & (kAttribute | kDegrade)) {
    require(!cfg.method.empty(), "missing --method");
    for (const auto& m : cfg.method) {
      bool known = false;
      for (const auto& v : attribution_methods()) known |= v == m;
      require(known, "unknown method '" + m + "'; valid methods: " + join(attribution_methods()));
    }
    for (std::size_t i = 0; i < cfg.method.size(); ++i)
      for (std::size_t j = 0; j < i; ++j) require(cfg.method[i] != cfg.method[j], "method '" + cfg.method[i] + "' listed twice");
  }
  if (cmd == kAttribute) {
    require(cfg.method.size() == 1, "attribute takes exactly one method");
    require(cfg.text.empty() ? cfg.index >= 0 : true, "index must be >= 0");
  }
  if (cmd == kSweep) require(cfg.axis == "layer" || cfg.axis == "beta", "axis must be layer or beta");
  return cfg;
}

nlohmann::json resolved_json(const RunConfig& cfg, Command cmd) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& d : key_defs())
    if (d.info.commands & cmd) j[d.info.key] = d.get(cfg);
  return j;
}

std::vector<std::string> resolved_lines(const RunConfig& cfg, Command cmd) {
  std::vector<std::string> out;
  for (const auto& d : key_defs()) {
    if ((d.info.commands & cmd) == 0) continue;
    const nlohmann::json v = d.get(cfg);
    std::string text;
    if (v.is_string()) {
      text = v.get<std::string>();
    } else if (v.is_number_float()) {
      text = format_number(v.get<double>());
    } else {
      text = v.dump();
    }
    out.push_back(d.info.key + " = " + text);
  }
  return out;
}

std::string format_number(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace ibakit::cli
