#pragma once

#include <string>

#include "civdg/scm.hpp"

namespace civdg {

// Compact binary dataset format: magic "CIVD", version u16, little-endian
// header (role, provenance snapshot, dims), then row-major f64 payloads.
// Round-trips bit-exactly.
void save_dataset_binary(const DatasetSplit& split, const std::string& path);
DatasetSplit load_dataset_binary(const std::string& path);

// Delimited text format with a header row naming columns x_0..x_{p-1},
// y_0..y_{C-1}, z, d and optional latent columns yr_*, u_*, a_*.  Values
// are printed with 17 significant digits, so doubles survive the trip.
// Text files carry no provenance; the loader returns a split whose config
// holds the inferred dims only.
void save_dataset_text(const DatasetSplit& split, const std::string& path,
                       bool include_latent = true);
DatasetSplit load_dataset_text(const std::string& path);

}  // namespace civdg
