#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>

#include "doctest.h"
#include "ibakit/checkpoint_io.hpp"
#include "ibakit/error.hpp"
#include "json.hpp"
#include "support/toy_model.hpp"

using namespace ibakit;
using ibakit::testing::toy_checkpoint;

namespace {

// Re-encodes a serialized checkpoint after editing its JSON header.
std::string with_header(const std::string& bytes, const std::function<void(nlohmann::json&)>& edit) {
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data() + 8, 8);
  auto header = nlohmann::json::parse(bytes.substr(16, n));
  edit(header);
  const std::string text = header.dump();
  std::string out = bytes.substr(0, 8);
  const std::uint64_t len = text.size();
  out.append(reinterpret_cast<const char*>(&len), 8);
  return out + text + bytes.substr(16 + n);
}

}  // namespace

TEST_CASE("round trip is bit-exact") {
  ModelCheckpoint ckpt = toy_checkpoint();
  ckpt.metadata.epochs = 3;
  ckpt.metadata.seed = 99;
  ckpt.metadata.validation_accuracy = 0.93;
  ckpt.metadata.train_loss_per_epoch = {0.7, 0.3, 0.1};
  const auto path = std::filesystem::temp_directory_path() / "ibakit_roundtrip.ckpt";
  save_checkpoint(ckpt, path.string());
  const ModelCheckpoint back = load_checkpoint(path.string());
  std::filesystem::remove(path);

  CHECK(back.params.size() == ckpt.params.size());
  for (const auto& [name, t] : ckpt.params) {
    const auto a = t.data();
    const auto b = back.param(name).data();
    REQUIRE(a.size() == b.size());
    CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
  }
  CHECK(back.fingerprint() == ckpt.fingerprint());
  CHECK(back.vocab.regular_tokens() == ckpt.vocab.regular_tokens());
  CHECK(back.config.d_model == ckpt.config.d_model);
  CHECK(back.config.n_layers == ckpt.config.n_layers);
  CHECK(back.metadata.epochs == 3);
  CHECK(back.metadata.seed == 99);
  CHECK(back.metadata.validation_accuracy == 0.93);
  CHECK(back.metadata.train_loss_per_epoch == ckpt.metadata.train_loss_per_epoch);
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(ckpt));
}

TEST_CASE("wrong magic is a format error") {
  std::string bytes = serialize_checkpoint(toy_checkpoint());
  bytes[7] = '2';
  CHECK_THROWS_AS(deserialize_checkpoint(bytes), FormatError);
  CHECK_THROWS_AS(deserialize_checkpoint("IBA"), FormatError);
}

TEST_CASE("other format versions are rejected") {
  const std::string bytes = serialize_checkpoint(toy_checkpoint());
  CHECK_THROWS_AS(deserialize_checkpoint(with_header(bytes, [](auto& h) { h["format_version"] = 2; })),
                  VersionError);
}

TEST_CASE("truncated files are detected") {
  const std::string bytes = serialize_checkpoint(toy_checkpoint());
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 8)), TruncatedError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 40)), TruncatedError);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, 12)), TruncatedError);
}

TEST_CASE("manifest must match the closed parameter set") {
  const std::string bytes = serialize_checkpoint(toy_checkpoint());
  const auto drop = with_header(bytes, [](auto& h) { h["parameters"].erase(h["parameters"].begin() + 3); });
  try {
    deserialize_checkpoint(drop);
    FAIL("expected MissingParameterError");
  } catch (const MissingParameterError& e) {
    CHECK(std::string(e.what()).find("layer.0.") != std::string::npos);
  }
  const auto rename = with_header(bytes, [](auto& h) { h["parameters"][0]["name"] = "embed.extra"; });
  CHECK_THROWS_AS(deserialize_checkpoint(rename), UnknownParameterError);
  const auto reshape = with_header(bytes, [](auto& h) { h["parameters"][0]["shape"] = {1, 2}; });
  CHECK_THROWS_AS(deserialize_checkpoint(reshape), FormatError);
}

TEST_CASE("load errors are distinct types") {
  const std::string bytes = serialize_checkpoint(toy_checkpoint());
  int kinds = 0;
  auto kind = [](const std::string& b) {
    try {
      deserialize_checkpoint(b);
    } catch (const FormatError&) {
      return 1;
    } catch (const VersionError&) {
      return 2;
    } catch (const TruncatedError&) {
      return 3;
    } catch (const UnknownParameterError&) {
      return 4;
    } catch (const MissingParameterError&) {
      return 5;
    }
    return 0;
  };
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  kinds |= 1 << kind(bad_magic);
  kinds |= 1 << kind(with_header(bytes, [](auto& h) { h["format_version"] = 0; }));
  kinds |= 1 << kind(bytes.substr(0, bytes.size() - 1));
  kinds |= 1 << kind(with_header(bytes, [](auto& h) { h["parameters"][1]["name"] = "nope"; }));
  kinds |= 1 << kind(with_header(bytes, [](auto& h) { h["parameters"].erase(h["parameters"].end() - 1); }));
  CHECK(kinds == 0b111110);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.ckpt"), IoError);
}
