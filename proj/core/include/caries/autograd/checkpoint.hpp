#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "caries/autograd/optim.hpp"

namespace caries::ag {

inline constexpr int kCheckpointFormatVersion = 1;

/// Single-file checkpoint container.
///
/// Layout: a compact UTF-8 JSON header terminated by '\n' and padded with
/// spaces so that the payload starts on an 8-byte boundary, followed by the
/// parameter values as little-endian IEEE-754 doubles in header order.
///
///   {"format":"caries-ckpt","version":1,"payload_offset":N,
///    "params":[{"name":..,"shape":[..]},..],"optimizer":{..},"meta":{..}}
struct Checkpoint {
    std::vector<Parameter> params;
    nlohmann::json optimizer = nlohmann::json::object();
    nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Serialized bytes; identical inputs give identical bytes.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

/// Copies values from `ckpt` into same-named parameters of `store`. Every
/// store entry must be present with a matching shape unless `allow_missing`.
void restore_parameters(ParameterStore& store, const Checkpoint& ckpt, bool allow_missing = false);

nlohmann::json adamw_hparams(const AdamWConfig& config);

}  // namespace caries::ag
