#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "unigen/model.hpp"

namespace unigen::checkpoint {

inline constexpr int kFormatVersion = 1;

struct Metadata {
  std::string stage;  // teacher_seq, teacher_tree, backbone, selector
  long step = 0;
  std::uint64_t seed = 0;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

/// Layout: the 8-byte magic "UNIGENCK", a little-endian u32 format version,
/// a u64 header length, the JSON header (config, grammar text, vocabularies,
/// metadata, tensor table, backbone fingerprint), then every tensor as raw
/// little-endian doubles in row-major order.
void save(const std::string& path, const model::Model& m, const Metadata& meta);

struct Loaded {
  model::Model model;
  Metadata metadata;
};

/// Throws CheckpointError on a missing, truncated or inconsistent file.
Loaded load(const std::string& path);

/// The JSON header alone.
nlohmann::ordered_json read_header(const std::string& path);

}  // namespace unigen::checkpoint
