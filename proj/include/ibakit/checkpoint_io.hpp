#pragma once

#include <string>

#include "ibakit/model.hpp"

namespace ibakit {

// Container layout:
//   8 bytes  magic "IBAKIT01"
//   8 bytes  header length n, little-endian u64
//   n bytes  UTF-8 JSON header: format_version, config, vocab, metadata and a
//            parameter manifest of {name, shape, offset, count}
//   payload  little-endian f64 values in manifest order; offsets are byte
//            offsets from the start of the payload
inline constexpr int kCheckpointFormatVersion = 1;

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::string& path);
// FormatError on bad magic or header, VersionError on another format version,
// TruncatedError on short payloads, UnknownParameterError / MissingParameterError
// when the manifest differs from the closed parameter set.
ModelCheckpoint load_checkpoint(const std::string& path);

std::string serialize_checkpoint(const ModelCheckpoint& checkpoint);
ModelCheckpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace ibakit
