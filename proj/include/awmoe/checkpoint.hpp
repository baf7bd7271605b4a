#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "awmoe/tensor.hpp"

namespace awmoe::ckpt {

/// Ordered (name, tensor) entries; order is preserved by the container and is
/// part of the byte-level format.
using NamedTensors = std::vector<std::pair<std::string, nn::Tensor>>;

/// Little-endian binary container: magic "AWCK", u32 version, u64 count, then
/// per tensor u16 name length, name bytes, u8 ndim, u32 dims, f32 payload.
/// Round-trips bit-exactly. See docs/FORMATS.md.
std::vector<uint8_t> serialize(const NamedTensors& entries);
NamedTensors deserialize(const std::vector<uint8_t>& bytes);

void save(const std::string& path, const NamedTensors& entries);
NamedTensors load(const std::string& path);

/// FNV-1a 64 over a byte stream.
uint64_t fnv1a64(const uint8_t* data, size_t len);

/// Hash of the container bytes for the given tensors (parameter audits).
uint64_t hash_tensors(const NamedTensors& entries);
uint64_t hash_tensor(const nn::Tensor& t);

}  // namespace awmoe::ckpt
