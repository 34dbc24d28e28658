#include "ibakit/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ibakit/error.hpp"
#include "json.hpp"

namespace ibakit {

namespace {

const std::vector<std::string> kPositive = {"great", "excellent", "wonderful", "superb",
                                            "delightful", "brilliant", "charming", "fantastic"};
const std::vector<std::string> kNegative = {"terrible", "awful", "dreadful", "boring",
                                            "horrible", "dull", "poor", "disappointing"};
const std::vector<std::string> kFiller = {
    "the",    "movie",   "film",   "was",    "a",      "story",  "with",    "actors",
    "plot",   "and",     "it",     "i",      "saw",    "this",   "on",      "friday",
    "about",  "two",     "hours",  "long",   "scene",  "music",  "director", "city",
    "really", "quite",   "some",   "parts",  "of",     "ending", "camera",  "script",
    "at",     "night",   "my",     "friend", "said",   "after",  "cast",    "budget",
    "its",    "second",  "half",   "felt",   "very",   "old",    "new",     "studio",
    "in",     "theater", "we",     "watched", "again", "title",  "role",    "by"};

}  // namespace

const std::vector<std::string>& planted_keywords(int label) {
  if (label == 0) return kNegative;
  if (label == 1) return kPositive;
  throw InputError("planted_keywords: label must be 0 or 1");
}

std::vector<Example> parse_corpus(const std::string& contents) {
  std::vector<Example> out;
  std::istringstream in(contents);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object() || !j.contains("label") || !j.contains("text") ||
          !j["label"].is_number_integer() || !j["text"].is_string()) {
        throw InputError("expected {\"label\": int, \"text\": string}");
      }
      const auto label = j["label"].get<long long>();
      if (label < 0) throw InputError("label must be non-negative");
      out.push_back({static_cast<int>(label), j["text"].get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw InputError("corpus line " + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Example> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str());
}

void save_corpus(const std::string& path, const std::vector<Example>& examples,
                 const std::vector<std::string>& comments) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write corpus '" + path + "'");
  for (const auto& c : comments) out << "# " << c << '\n';
  for (const auto& e : examples) {
    out << nlohmann::json{{"label", e.label}, {"text", e.text}}.dump() << '\n';
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<Example> generate_corpus(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::bernoulli_distribution second_keyword(0.25);
  std::uniform_int_distribution<std::size_t> length(8, 20);
  std::uniform_int_distribution<std::size_t> filler(0, kFiller.size() - 1);
  std::uniform_int_distribution<std::size_t> keyword(0, kPositive.size() - 1);
  std::vector<Example> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = coin(rng) ? 1 : 0;
    std::vector<std::string> words(length(rng));
    for (auto& w : words) w = kFiller[filler(rng)];
    const std::size_t planted = second_keyword(rng) ? 2 : 1;
    for (std::size_t k = 0; k < planted; ++k) {
      std::uniform_int_distribution<std::size_t> pos(0, words.size() - 1);
      words[pos(rng)] = planted_keywords(label)[keyword(rng)];
    }
    std::string text;
    for (const auto& w : words) {
      if (!text.empty()) text += ' ';
      text += w;
    }
    out.push_back({label, std::move(text)});
  }
  return out;
}

CorpusSplit split_corpus(const std::vector<Example>& examples, std::uint64_t seed) {
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_train = examples.size() * 8 / 10;
  const std::size_t n_val = examples.size() / 10;
  CorpusSplit s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const Example& e = examples[order[i]];
    if (i < n_train) {
      s.train.push_back(e);
    } else if (i < n_train + n_val) {
      s.validation.push_back(e);
    } else {
      s.test.push_back(e);
    }
  }
  return s;
}

}  // namespace ibakit
