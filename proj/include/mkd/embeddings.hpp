#pragma once

// Per-sample embedding files and the JSON manifest tying a cohort together.
//
// Embedding file: "MKDE" | u32 version (1) | u32 rows | u32 cols |
// rows*cols f32, row-major, little-endian. Values widen to double on load.

#include <cstdint>
#include <string>
#include <vector>

#include "mkd/data.hpp"
#include "mkd/tensor.hpp"

namespace mkd {

inline constexpr std::uint32_t kEmbeddingVersion = 1;

std::string encode_embedding(const Tensor& m);
Tensor decode_embedding(const std::string& bytes, const std::string& name);

void write_embedding(const std::string& path, const Tensor& m);
Tensor read_embedding(const std::string& path);

/// Loads every sample listed in the manifest. Relative file paths resolve
/// against the manifest's directory. Samples without a genomic file come
/// back pathology-only.
Dataset load_manifest(const std::string& manifest_path);

/// Writes one embedding file per modality per sample under `dir` plus
/// `dir/manifest.json`; returns the manifest path.
std::string write_dataset(const std::string& dir, const Dataset& data);

} // namespace mkd
