#pragma once

#include <string>

#include "revlab/model.hpp"

namespace revlab {

// Binary checkpoint container, little endian throughout:
//   magic "RLCK" (4 bytes), format version u32 (currently 1),
//   config JSON length u64 + bytes (model config round-trip),
//   tensor count u64, then per tensor:
//     name length u64 + bytes, rows i32, cols i32, rows*cols f32 values.
// Tensors appear in layout order and must match the config exactly on load.
void save_checkpoint(const std::string& path, const Params& ps);
Params load_checkpoint(const std::string& path);

}  // namespace revlab
