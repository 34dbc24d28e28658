#include "ibakit/checkpoint_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "ibakit/error.hpp"
#include "json.hpp"

namespace ibakit {

namespace {

constexpr char kMagic[8] = {'I', 'B', 'A', 'K', 'I', 'T', '0', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

void put_u64(std::string& out, std::uint64_t v) {
  char b[8];
  std::memcpy(b, &v, 8);
  out.append(b, 8);
}

nlohmann::json config_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},     {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},           {"max_seq_len", c.max_seq_len},
          {"n_classes", c.n_classes}};
}

ModelConfig config_from(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  return c;
}

}  // namespace

std::string serialize_checkpoint(const ModelCheckpoint& ckpt) {
  const auto manifest = ModelCheckpoint::parameter_manifest(ckpt.config);
  nlohmann::json params = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, shape] : manifest) {
    const Tensor& t = ckpt.param(name);
    if (t.shape() != shape) {
      throw ShapeError("parameter " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                       shape_str(shape));
    }
    params.push_back({{"name", name}, {"shape", shape}, {"offset", offset}, {"count", t.numel()}});
    offset += t.numel() * sizeof(double);
  }
  const auto& m = ckpt.metadata;
  nlohmann::json header = {
      {"format_version", kCheckpointFormatVersion},
      {"config", config_json(ckpt.config)},
      {"vocab", ckpt.vocab.regular_tokens()},
      {"metadata",
       {{"epochs", m.epochs},
        {"seed", m.seed},
        {"train_accuracy", m.train_accuracy},
        {"validation_accuracy", m.validation_accuracy},
        {"train_loss_per_epoch", m.train_loss_per_epoch}}},
      {"parameters", params},
  };
  const std::string text = header.dump();
  std::string out(kMagic, 8);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& [name, shape] : manifest) {
    const auto d = ckpt.param(name).data();
    out.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
  }
  return out;
}

ModelCheckpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError("checkpoint: bad magic bytes (expected IBAKIT01)");
  }
  if (bytes.size() < 16) throw TruncatedError("checkpoint: truncated before header length");
  std::uint64_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + 8, 8);
  if (header_len > bytes.size() - 16) throw TruncatedError("checkpoint: truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: header is not valid JSON: ") + e.what());
  }
  const std::string_view payload(bytes.data() + 16 + header_len, bytes.size() - 16 - header_len);

  ModelCheckpoint ckpt;
  try {
    const int version = header.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw VersionError("checkpoint: format version " + std::to_string(version) +
                         " is not supported (expected " +
                         std::to_string(kCheckpointFormatVersion) + ")");
    }
    ckpt.config = config_from(header.at("config"));
    ckpt.vocab = Vocab(header.at("vocab").get<std::vector<std::string>>());
    const auto& m = header.at("metadata");
    ckpt.metadata.epochs = m.at("epochs").get<int>();
    ckpt.metadata.seed = m.at("seed").get<std::uint64_t>();
    ckpt.metadata.train_accuracy = m.at("train_accuracy").get<double>();
    ckpt.metadata.validation_accuracy = m.at("validation_accuracy").get<double>();
    ckpt.metadata.train_loss_per_epoch = m.at("train_loss_per_epoch").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what());
  }
  if (ckpt.vocab.size() != ckpt.config.vocab_size) {
    throw FormatError("checkpoint: vocab has " + std::to_string(ckpt.vocab.size()) +
                      " entries but config says " + std::to_string(ckpt.config.vocab_size));
  }
  try {
    ckpt.config.validate();
  } catch (const InputError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }

  std::map<std::string, Shape> expected;
  for (auto& [name, shape] : ModelCheckpoint::parameter_manifest(ckpt.config)) expected[name] = shape;
  std::set<std::string> seen;
  try {
    for (const auto& p : header.at("parameters")) {
      const auto name = p.at("name").get<std::string>();
      const auto it = expected.find(name);
      if (it == expected.end()) throw UnknownParameterError("checkpoint: unknown parameter '" + name + "'");
      const auto shape = p.at("shape").get<Shape>();
      if (shape != it->second) {
        throw FormatError("checkpoint: parameter '" + name + "' has shape " + shape_str(shape) +
                          ", expected " + shape_str(it->second));
      }
      const auto offset = p.at("offset").get<std::size_t>();
      const auto count = p.at("count").get<std::size_t>();
      if (count != shape_numel(shape)) {
        throw FormatError("checkpoint: parameter '" + name + "' count disagrees with its shape");
      }
      if (offset > payload.size() || count * sizeof(double) > payload.size() - offset) {
        throw TruncatedError("checkpoint: payload for '" + name + "' is truncated");
      }
      std::vector<double> values(count);
      std::memcpy(values.data(), payload.data() + offset, count * sizeof(double));
      ckpt.params.insert_or_assign(name, Tensor(shape, std::move(values)));
      seen.insert(name);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed parameter manifest: ") + e.what());
  }
  for (const auto& [name, shape] : expected) {
    if (seen.count(name) == 0) throw MissingParameterError("checkpoint: missing parameter '" + name + "'");
  }
  if (!ckpt.all_finite()) throw InvalidValueError("checkpoint: parameters contain NaN or Inf");
  return ckpt;
}

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::string& path) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace ibakit
