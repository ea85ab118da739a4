#pragma once

#include <string>

#include "mvlab/model.hpp"

namespace mvlab {

// Binary checkpoint: magic "CKPT", a version word, a JSON architecture
// header, then hidden, head, and bias as little-endian f64 in row-major
// order. Round-trips are bitwise exact.
void save_checkpoint(const std::string& path, const ModelParams& model);
ModelParams load_checkpoint(const std::string& path);

}  // namespace mvlab
