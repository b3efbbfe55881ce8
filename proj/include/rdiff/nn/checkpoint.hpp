#pragma once

#include <string>

#include "rdiff/nn/param_store.hpp"

namespace rdiff::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes every parameter as f32 in the RDCK little-endian format.
void save_checkpoint(const ParamStore<float>& store, const std::string& path);
std::string encode_checkpoint(const ParamStore<float>& store);

/// Throws LoadError on a bad magic, version, truncation or trailing bytes.
ParamStore<float> load_checkpoint(const std::string& path);
ParamStore<float> decode_checkpoint(const std::string& bytes);

/// Entries whose names start with `prefix`, with the prefix removed.
ParamStore<float> extract_prefix(const ParamStore<float>& store, const std::string& prefix);
/// Copies every entry of `src` into `dst` under `prefix`.
void merge_prefixed(ParamStore<float>& dst, const ParamStore<float>& src, const std::string& prefix);

}  // namespace rdiff::nn
