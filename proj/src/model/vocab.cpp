#include <algorithm>
#include <cctype>
#include <map>

#include "ibakit/error.hpp"
#include "ibakit/model.hpp"

namespace ibakit {

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(std::vector<std::string> tokens) {
  id_to_token_ = {std::string(kPadToken), std::string(kUnkToken), std::string(kClsToken)};
  for (int i = 0; i < 3; ++i) token_to_id_.emplace(id_to_token_[static_cast<std::size_t>(i)], i);
  for (auto& t : tokens) {
    if (token_to_id_.count(t) != 0) throw InputError("vocab: duplicate or reserved token '" + t + "'");
    token_to_id_.emplace(t, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(std::move(t));
  }
}

int Vocab::id(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw RangeError("vocab: id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(std::string_view token) const {
  return token_to_id_.count(std::string(token)) != 0;
}

std::vector<std::string> Vocab::regular_tokens() const {
  return {id_to_token_.begin() + 3, id_to_token_.end()};
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

Vocab build_vocab(std::span<const std::string> corpus, std::size_t max_size) {
  if (corpus.empty()) throw InputError("build_vocab: empty corpus");
  if (max_size < 3) throw InputError("build_vocab: max_size must leave room for reserved tokens");
  std::map<std::string, std::size_t> counts;
  for (const auto& line : corpus)
    for (auto& w : split_words(line)) ++counts[w];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // counts is lexicographic already; stable sort keeps that order among ties
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> keep;
  for (auto& [w, n] : ranked) {
    if (keep.size() + 3 >= max_size) break;
    if (w == Vocab::kPadToken || w == Vocab::kUnkToken || w == Vocab::kClsToken) continue;
    keep.push_back(w);
  }
  return Vocab(std::move(keep));
}

std::size_t Instance::length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

Instance tokenize(std::string_view text, const Vocab& vocab, std::size_t max_seq_len, int label) {
  if (max_seq_len < 1) throw InputError("tokenize: max_seq_len must be at least 1");
  Instance inst;
  inst.label = label;
  inst.ids.assign(max_seq_len, Vocab::kPad);
  inst.mask.assign(max_seq_len, 0);
  inst.ids[0] = Vocab::kCls;
  inst.mask[0] = 1;
  inst.words.emplace_back(Vocab::kClsToken);
  std::size_t pos = 1;
  for (auto& w : split_words(text)) {
    if (pos >= max_seq_len) break;
    inst.ids[pos] = vocab.id(w);
    inst.mask[pos] = 1;
    inst.words.push_back(std::move(w));
    ++pos;
  }
  return inst;
}

}  // namespace ibakit
