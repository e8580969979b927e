#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "pagoda/nn.hpp"

namespace pagoda {

/// Write a file atomically (temp file in the same directory, then rename).
void write_file_atomic(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

/// FNV-1a over a file's bytes, as a hex string. Used for provenance headers.
std::string file_hash_hex(const std::string& path);
std::string bytes_hash_hex(const std::string& bytes);

/// Checkpoint layout: "PGDA" | u16 version | u64 manifest length | manifest
/// JSON | payload of little-endian f64. Manifest entries carry (name, shape,
/// offset in bytes into the payload, trainable flag); EMA shadows are stored
/// as "<name>.ema". `meta` rides along for sidecar-style run descriptors.
struct Checkpoint {
    std::map<std::string, Tensor> tensors; // includes "<name>.ema" entries
    std::map<std::string, bool> trainable;
    nlohmann::json meta;

    bool has(const std::string& name) const { return tensors.count(name) > 0; }
    const Tensor& at(const std::string& name) const;
};

std::string encode_checkpoint(const ParamSet& params, const nlohmann::json& meta);
void save_checkpoint(const std::string& path, const ParamSet& params, const nlohmann::json& meta);
Checkpoint load_checkpoint(const std::string& path);

/// Restore values (and EMA shadows / trainable flags) into an already-built
/// registry. Every registered parameter must be present with matching shape.
void restore_params(ParamSet& params, const Checkpoint& ck);

/// Flat tensor files: "PGTS" | u16 version | u32 rank | u64 dims | f64 LE
/// payload. Used for samples, observations and latents on the CLI surface.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

} // namespace pagoda
