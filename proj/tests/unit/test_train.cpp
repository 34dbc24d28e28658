#include <cstring>
#include <set>

#include "doctest.h"
#include "ibakit/corpus.hpp"
#include "ibakit/error.hpp"
#include "ibakit/train.hpp"
#include "support/toy_model.hpp"

using namespace ibakit;

namespace {

bool same_params(const ModelCheckpoint& a, const ModelCheckpoint& b) {
  if (a.params.size() != b.params.size()) return false;
  for (const auto& [name, t] : a.params) {
    const auto x = t.data();
    const auto y = b.param(name).data();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

TrainConfig quick() {
  TrainConfig t;
  t.epochs = 1;
  t.batch = 8;
  t.seed = 11;
  return t;
}

}  // namespace

TEST_CASE("corpus parsing skips comments and reports bad lines") {
  const auto ex = parse_corpus("# header\n{\"label\": 1, \"text\": \"good\"}\n\n{\"label\":0,\"text\":\"bad\"}\n");
  REQUIRE(ex.size() == 2);
  CHECK(ex[0].label == 1);
  CHECK(ex[1].text == "bad");
  try {
    parse_corpus("{\"label\": 1, \"text\": \"ok\"}\n{\"label\": \"x\"}\n");
    FAIL("expected InputError");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_corpus("not json\n"), InputError);
}

TEST_CASE("generated corpus is keyword-separable and reproducible") {
  const auto a = generate_corpus(300, 5);
  const auto b = generate_corpus(300, 5);
  REQUIRE(a.size() == 300);
  int positives = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].text == b[i].text);
    CHECK(a[i].label == b[i].label);
    positives += a[i].label;
    const auto words = split_words(a[i].text);
    const std::set<std::string> bag(words.begin(), words.end());
    int votes[2] = {0, 0};
    for (int c = 0; c < 2; ++c)
      for (const auto& k : planted_keywords(c)) votes[c] += static_cast<int>(bag.count(k));
    CHECK(votes[a[i].label] > 0);
    CHECK(votes[1 - a[i].label] == 0);
  }
  CHECK(positives > 100);
  CHECK(positives < 200);
}

TEST_CASE("split is 80/10/10, disjoint and seeded") {
  const auto ex = generate_corpus(2000, 1);
  const auto s = split_corpus(ex, 9);
  CHECK(s.train.size() == 1600);
  CHECK(s.validation.size() == 200);
  CHECK(s.test.size() == 200);
  const auto again = split_corpus(ex, 9);
  for (std::size_t i = 0; i < s.test.size(); ++i) CHECK(s.test[i].text == again.test[i].text);
  const auto other = split_corpus(ex, 10);
  bool differs = false;
  for (std::size_t i = 0; i < s.test.size(); ++i) differs |= s.test[i].text != other.test[i].text;
  CHECK(differs);
}

TEST_CASE("single-class corpus is rejected") {
  std::vector<Example> ex = {{1, "good"}, {1, "great"}};
  CHECK_THROWS_AS(train(ex, {}, ibakit::testing::toy_config(), quick()), InputError);
}

TEST_CASE("zero epochs returns the initialization") {
  const auto ex = generate_corpus(40, 2);
  TrainConfig t = quick();
  t.epochs = 0;
  const ModelCheckpoint c = train(ex, {}, ibakit::testing::toy_config(), t);
  std::vector<std::string> texts;
  for (const auto& e : ex) texts.push_back(e.text);
  ModelConfig cfg = ibakit::testing::toy_config();
  const ModelCheckpoint init = init_checkpoint(cfg, build_vocab(texts, t.max_vocab), t.seed);
  CHECK(same_params(c, init));
  CHECK(c.metadata.epochs == 0);
  CHECK(c.metadata.train_loss_per_epoch.empty());
}

TEST_CASE("training is deterministic for a seed and independent of jobs") {
  const auto ex = generate_corpus(64, 3);
  const ModelConfig cfg = ibakit::testing::toy_config();
  const ModelCheckpoint a = train(ex, ex, cfg, quick());
  const ModelCheckpoint b = train(ex, ex, cfg, quick());
  CHECK(same_params(a, b));
  TrainConfig par = quick();
  par.jobs = 3;
  CHECK(same_params(a, train(ex, ex, cfg, par)));
  TrainConfig other = quick();
  other.seed = 12;
  CHECK_FALSE(same_params(a, train(ex, ex, cfg, other)));
  CHECK(a.metadata.train_loss_per_epoch.size() == 1);
  CHECK(a.all_finite());
}

TEST_CASE("training reduces loss on a small separable corpus") {
  const auto ex = generate_corpus(160, 4);
  TrainConfig t = quick();
  t.epochs = 4;
  const ModelConfig cfg = ibakit::testing::toy_config();
  TrainConfig none = t;
  none.epochs = 0;
  const ModelCheckpoint init = train(ex, {}, cfg, none);
  const double before = mean_loss(init, tokenize_all(ex, init));
  const ModelCheckpoint c = train(ex, {}, cfg, t);
  CHECK(c.metadata.train_loss_per_epoch.back() < before);
}
