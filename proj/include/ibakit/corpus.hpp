#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ibakit {

struct Example {
  int label = 0;
  std::string text;
};

// One JSON object {"label": int, "text": string} per line; blank lines and
// lines starting with '#' are skipped. Malformed lines throw InputError
// naming the line number.
std::vector<Example> load_corpus(const std::string& path);
std::vector<Example> parse_corpus(const std::string& contents);
// `comments` are written first, each prefixed with "# ".
void save_corpus(const std::string& path, const std::vector<Example>& examples,
                 const std::vector<std::string>& comments = {});

// Two-class sentiment-style corpus. Each sentence is filler text with one or
// two class keywords planted at random positions; labels are fair coin flips,
// so a bag-of-words rule over the keywords classifies every example.
std::vector<Example> generate_corpus(std::size_t n, std::uint64_t seed);
const std::vector<std::string>& planted_keywords(int label);

struct CorpusSplit {
  std::vector<Example> train;
  std::vector<Example> validation;
  std::vector<Example> test;
};

// Seeded shuffle, then 80/10/10.
CorpusSplit split_corpus(const std::vector<Example>& examples, std::uint64_t seed);

}  // namespace ibakit
