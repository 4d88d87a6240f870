#pragma once

#include "tg3d/params.hpp"

#include <string>

namespace tg3d {

// Opaque binary checkpoint: 8-byte magic, u32 format version, then named
// double blobs. Loaders reject unknown magic/version and size mismatches.
void save_checkpoint(const std::string& path, const ParamSet& params);
void load_checkpoint(const std::string& path, const ParamSet& params);

uint64_t file_hash(const std::string& path);

} // namespace tg3d
