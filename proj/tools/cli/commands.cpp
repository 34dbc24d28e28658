#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "ibakit/checkpoint_io.hpp"
#include "ibakit/corpus.hpp"
#include "ibakit/error.hpp"
#include "ibakit/evaluation.hpp"
#include "ibakit/iba.hpp"
#include "ibakit/train.hpp"
#include "ibakit/version.hpp"

namespace ibakit::cli {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path.string() + "'");
  f << contents;
  if (!f) throw IoError("write failed for '" + path.string() + "'");
}

fs::path out_dir(const RunConfig& cfg) {
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  return dir;
}

nlohmann::json provenance(const RunConfig& cfg, Command cmd) {
  return {{"tool_version", version_string()}, {"command", command_name(cmd)}, {"config", resolved_json(cfg, cmd)}};
}

std::string comment_header(const RunConfig& cfg, Command cmd) {
  std::string s = std::string("# ") + version_string() + "\n# command = " + command_name(cmd) + "\n";
  for (const auto& line : resolved_lines(cfg, cmd)) s += "# " + line + "\n";
  return s;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct EvalData {
  ModelCheckpoint ckpt;
  std::vector<Instance> eval_set;
  std::vector<Instance> calibration;
};

// The evaluation set is the test split, cut to n_eval unless `whole_split`.
EvalData load_eval_data(const RunConfig& cfg, bool whole_split = false) {
  EvalData d;
  d.ckpt = load_checkpoint(cfg.checkpoint);
  const CorpusSplit split = split_corpus(load_corpus(cfg.corpus), cfg.split_seed);
  d.eval_set = tokenize_all(split.test, d.ckpt);
  if (!whole_split && cfg.n_eval > 0 && d.eval_set.size() > cfg.n_eval) d.eval_set.resize(cfg.n_eval);
  d.calibration = tokenize_all(split.train, d.ckpt);
  if (cfg.calibration > 0 && d.calibration.size() > cfg.calibration) d.calibration.resize(cfg.calibration);
  if (d.eval_set.empty()) throw InputError("corpus has no test instances after the split");
  if (d.calibration.empty()) throw InputError("corpus has no training instances for calibration");
  if (cfg.methods.iba.layer > d.ckpt.config.n_layers) {
    throw UsageError("layer " + std::to_string(cfg.methods.iba.layer) + " exceeds the model's " +
                     std::to_string(d.ckpt.config.n_layers) + " layers");
  }
  return d;
}

void method_layer_beta(const RunConfig& cfg, const std::string& method, nlohmann::json& j) {
  if (method == "iba") {
    j["layer"] = cfg.methods.iba.layer;
    j["beta"] = cfg.methods.iba.beta;
  } else {
    j["layer"] = -1;
    j["beta"] = 0.0;
  }
}

std::string html_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      case '\'': o += "&#39;"; break;
      default: o += c;
    }
  }
  return o;
}

std::vector<double> parse_values(const std::string& text, const std::string& axis) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    while (*end == ' ' || *end == '\t') ++end;
    if (*end != '\0') throw UsageError(axis + " sweep: '" + item + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError(axis + " sweep: no values");
  return out;
}

}  // namespace

void cmd_gen_corpus(const RunConfig& cfg, std::ostream& log) {
  const auto examples = generate_corpus(cfg.size, cfg.methods.seed);
  std::vector<std::string> comments = {
      version_string(),
      "synthetic two-class corpus: filler words with 1 keyword (2 with probability 0.25) of the label's class",
      "label 1 keywords:", "label 0 keywords:"};
  for (const auto& w : planted_keywords(1)) comments[2] += " " + w;
  for (const auto& w : planted_keywords(0)) comments[3] += " " + w;
  comments.push_back("command = gen-corpus");
  for (const auto& l : resolved_lines(cfg, kGenCorpus)) comments.push_back(l);
  const fs::path p(cfg.out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  save_corpus(cfg.out, examples, comments);
  std::size_t positive = 0;
  for (const auto& e : examples) positive += e.label == 1;
  log << "wrote " << examples.size() << " examples (" << positive << " positive) to " << cfg.out << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& log) {
  const CorpusSplit split = split_corpus(load_corpus(cfg.corpus), cfg.split_seed);
  if (split.train.empty() || split.validation.empty()) throw InputError("corpus too small to split");
  const ModelCheckpoint ckpt = train(split.train, split.validation, cfg.model, cfg.train, [&](int epoch, double loss) {
    log << "epoch " << epoch << " train loss " << fixed(loss, 5) << "\n" << std::flush;
  });
  save_checkpoint(ckpt, cfg.checkpoint);

  nlohmann::json m = provenance(cfg, kTrain);
  m["n_train"] = split.train.size();
  m["n_validation"] = split.validation.size();
  m["n_test"] = split.test.size();
  m["vocab_size"] = ckpt.config.vocab_size;
  m["n_classes"] = ckpt.config.n_classes;
  m["epochs"] = ckpt.metadata.epochs;
  m["train_loss_per_epoch"] = ckpt.metadata.train_loss_per_epoch;
  m["train_accuracy"] = ckpt.metadata.train_accuracy;
  m["validation_accuracy"] = ckpt.metadata.validation_accuracy;
  m["test_accuracy"] = split.test.empty() ? 0.0 : accuracy(ckpt, tokenize_all(split.test, ckpt), cfg.jobs);
  write_file(out_dir(cfg) / "metrics.json", m.dump(2) + "\n");
  log << "validation accuracy " << fixed(ckpt.metadata.validation_accuracy) << "; checkpoint " << cfg.checkpoint
      << "\n";
}

void cmd_attribute(const RunConfig& cfg, std::ostream& log) {
  EvalData d = load_eval_data(cfg, true);
  const std::string& method = cfg.method.front();
  Instance inst;
  std::size_t index = 0;
  if (!cfg.text.empty()) {
    inst = tokenize(cfg.text, d.ckpt.vocab, d.ckpt.config.max_seq_len, cfg.label);
    if (cfg.target == TargetMode::kGold && cfg.label < 0) {
      throw UsageError("--text with --target gold needs --label");
    }
  } else {
    if (static_cast<std::size_t>(cfg.index) >= d.eval_set.size()) {
      throw UsageError("index " + std::to_string(cfg.index) + " outside the " + std::to_string(d.eval_set.size()) +
                       " test instances");
    }
    index = static_cast<std::size_t>(cfg.index);
    inst = d.eval_set[index];
  }
  const std::vector<Instance> one = {inst};
  const std::vector<int> targets = select_targets(d.ckpt, one, cfg.target);
  std::shared_ptr<const NoiseStats> stats;
  if (method == "iba") {
    stats = std::make_shared<NoiseStats>(estimate_noise_stats(d.ckpt, d.calibration, cfg.methods.iba.layer,
                                                              cfg.methods.stats_mode, cfg.methods.seed, cfg.jobs));
  }
  const AttributionBatch batch = attribute_all(d.ckpt, one, targets, method, cfg.methods, stats, 1, index);
  const AttributionMap& map = batch.maps.front();

  nlohmann::json j = to_json(map);
  const nlohmann::json prov = provenance(cfg, kAttribute);
  for (auto it = prov.begin(); it != prov.end(); ++it) j[it.key()] = it.value();
  if (method == "iba") j["mean_mu_final"] = batch.final_mean_mu.front();
  write_file(out_dir(cfg) / "attribution.json", j.dump(2) + "\n");
  if (!cfg.heatmap.empty()) write_file(cfg.heatmap, render_heatmap(map, prov));

  std::size_t top = map.scores.size() > 1 ? 1 : 0;
  for (std::size_t i = 1; i < map.scores.size(); ++i)
    if (map.scores[i] > map.scores[top]) top = i;
  log << method << " target " << map.target << ", top token '" << map.tokens[top] << "'\n";
}

void cmd_degrade(const RunConfig& cfg, std::ostream& log) {
  EvalData d = load_eval_data(cfg);
  const DegradationReport r = run_degradation(d.ckpt, d.eval_set, d.calibration, cfg.method, cfg.methods,
                                              cfg.fractions, cfg.target, cfg.removal, cfg.jobs);
  std::string csv = comment_header(cfg, kDegrade) + "method,fraction,p_mean,d_norm,n\n";
  for (std::size_t m = 0; m < r.curves.size(); ++m) {
    const auto& c = r.curves[m];
    for (std::size_t f = 0; f < c.fractions.size(); ++f) {
      csv += c.method + "," + format_number(c.fractions[f]) + "," + format_number(c.p_mean[f]) + "," +
             format_number(r.normalized[m].d_norm[f]) + "," + std::to_string(c.n) + "\n";
    }
  }
  nlohmann::json summary = provenance(cfg, kDegrade);
  summary["n_instances"] = d.eval_set.size();
  summary["original_p_mean"] = r.curves.front().original();
  summary["results"] = nlohmann::json::array();
  for (std::size_t m = 0; m < r.curves.size(); ++m) {
    nlohmann::json e = {{"method", r.curves[m].method}, {"drop_at_11pct", r.drop_at_11pct[m]}};
    method_layer_beta(cfg, r.curves[m].method, e);
    summary["results"].push_back(e);
    log << r.curves[m].method << " drop_at_11pct " << fixed(r.drop_at_11pct[m]) << "\n";
  }
  const fs::path dir = out_dir(cfg);
  write_file(dir / "degradation.csv", csv);
  write_file(dir / "degradation_summary.json", summary.dump(2) + "\n");
}

void cmd_sweep(const RunConfig& cfg, std::ostream& log) {
  EvalData d = load_eval_data(cfg);
  SweepReport r;
  if (cfg.axis == "layer") {
    std::vector<std::size_t> layers;
    if (cfg.values.empty()) {
      for (std::size_t l = 0; l <= d.ckpt.config.n_layers; ++l) layers.push_back(l);
    } else {
      for (double v : parse_values(cfg.values, "layer")) {
        if (v < 0 || v != std::floor(v) || v > static_cast<double>(d.ckpt.config.n_layers)) {
          throw UsageError("layer sweep: " + format_number(v) + " is not a layer in 0.." +
                           std::to_string(d.ckpt.config.n_layers));
        }
        layers.push_back(static_cast<std::size_t>(v));
      }
    }
    r = layer_sweep(d.ckpt, d.eval_set, d.calibration, layers, cfg.methods, cfg.fractions, cfg.target, cfg.removal,
                    cfg.jobs);
  } else {
    const std::vector<double> betas =
        cfg.values.empty() ? std::vector<double>{1e-7, 1e-5, 1e-3, 1e-1} : parse_values(cfg.values, "beta");
    for (double b : betas)
      if (!(b > 0.0)) throw UsageError("beta sweep: values must be > 0, got " + format_number(b));
    r = beta_sweep(d.ckpt, d.eval_set, d.calibration, betas, cfg.methods, cfg.fractions, cfg.target, cfg.removal,
                   cfg.jobs);
  }
  std::string csv = comment_header(cfg, kSweep) + "axis,value,drop_at_11pct,mean_mu_final\n";
  for (const auto& p : r.points) {
    csv += r.axis + "," + format_number(p.value) + "," + format_number(p.drop_at_11pct) + "," +
           format_number(p.mean_mu_final) + "\n";
    log << r.axis << " " << format_number(p.value) << " drop_at_11pct " << fixed(p.drop_at_11pct) << " mean_mu "
        << fixed(p.mean_mu_final) << "\n";
  }
  write_file(out_dir(cfg) / ("sweep_" + r.axis + ".csv"), csv);
}

std::string render_heatmap(const AttributionMap& map, const nlohmann::json& provenance) {
  double lo = 0.0, hi = 0.0;
  if (!map.scores.empty()) {
    lo = *std::min_element(map.scores.begin(), map.scores.end());
    hi = *std::max_element(map.scores.begin(), map.scores.end());
  }
  std::string body;
  for (std::size_t i = 0; i < map.tokens.size(); ++i) {
    const double norm = hi > lo ? (map.scores[i] - lo) / (hi - lo) : 0.0;
    const int fade = static_cast<int>(std::lround(255.0 * (1.0 - norm)));
    body += "<span class=\"tok\" data-index=\"" + std::to_string(i) + "\" data-score=\"" +
            format_number(map.scores[i]) + "\" data-norm=\"" + format_number(norm) +
            "\" style=\"background-color: rgb(255," + std::to_string(fade) + "," + std::to_string(fade) + ")\">" +
            html_escape(map.tokens[i]) + "</span>\n";
  }
  std::string meta = provenance.dump();
  // keep the JSON from closing the script element early
  for (std::size_t p = meta.find("</"); p != std::string::npos; p = meta.find("</", p + 3)) meta.replace(p, 2, "<\\/");
  return "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>" + html_escape(map.method) +
         " attribution</title>\n<style>.tok{padding:2px 3px;margin:1px;display:inline-block;font-family:monospace}"
         "</style>\n<script type=\"application/json\" id=\"provenance\">" + meta + "</script>\n</head>\n<body>\n<p>" +
         html_escape(map.method) + ", target " + std::to_string(map.target) + "</p>\n<div class=\"heatmap\">\n" +
         body + "</div>\n</body>\n</html>\n";
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Information-bottleneck attribution toolkit for a small transformer text classifier", "ibakit"};
  app.set_version_flag("--version", std::string(version_string()));
  app.require_subcommand(1);

  struct Sub {
    Command cmd;
    CLI::App* app;
    std::string config_path;
    std::map<std::string, std::string> flags;
  };
  const std::vector<std::pair<Command, std::string>> subs = {
      {kGenCorpus, "write a synthetic keyword-labelled corpus"},
      {kTrain, "train the classifier and write a checkpoint plus metrics"},
      {kAttribute, "explain one instance with one method"},
      {kDegrade, "run the token-removal degradation test"},
      {kSweep, "degradation of IBA across layers or beta values"}};
  std::vector<std::unique_ptr<Sub>> subcommands;
  for (const auto& [cmd, help] : subs) {
    auto s = std::make_unique<Sub>();
    s->cmd = cmd;
    s->app = app.add_subcommand(command_name(cmd), help);
    s->app->add_option("--config", s->config_path, "flat key = value config file; flags win");
    for (const auto& k : config_keys()) {
      if ((k.commands & cmd) == 0) continue;
      std::string flag = k.key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      Sub* raw = s.get();
      const std::string key = k.key;
      s->app->add_option_function<std::string>(
          "--" + flag, [raw, key](const std::string& v) { raw->flags[key] = v; }, k.help);
    }
    subcommands.push_back(std::move(s));
  }

  if (args.size() > 1 && !args[1].empty() && args[1][0] != '-') {
    bool known = false;
    for (const auto& [cmd, help] : subs) known |= command_name(cmd) == args[1];
    if (!known) {
      err << "error: unknown command '" << args[1] << "' (commands: gen-corpus, train, attribute, degrade, sweep)\n";
      return 2;
    }
  }
  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << version_string() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return 2;
  }

  for (const auto& s : subcommands) {
    if (!s->app->parsed()) continue;
    try {
      const auto file = s->config_path.empty() ? std::map<std::string, std::string>{} : read_config_file(s->config_path);
      const RunConfig cfg = resolve(s->cmd, file, s->flags);
      switch (s->cmd) {
        case kGenCorpus: cmd_gen_corpus(cfg, out); break;
        case kTrain: cmd_train(cfg, out); break;
        case kAttribute: cmd_attribute(cfg, out); break;
        case kDegrade: cmd_degrade(cfg, out); break;
        case kSweep: cmd_sweep(cfg, out); break;
      }
      return 0;
    } catch (const std::exception& e) {
      std::string msg = e.what();
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      err << "error: " << msg << "\n";
      return dynamic_cast<const UsageError*>(&e) ? 2 : 1;
    }
  }
  return 2;
}

}  // namespace ibakit::cli
