#pragma once

#include <cstdint>
#include <string>

#include "mvlab/multiview.hpp"

namespace mvlab {

// FNV-1a 64-bit over a byte range / a whole file.
std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64_file(const std::string& path);
std::string checksum_hex(std::uint64_t checksum);

// Binary dataset format: magic "MVDS", a version word, a JSON header
// carrying the generation config and the bank checksum, then the bank rows
// and per-sample records as little-endian f64 payload. Round-trips are
// bitwise exact.
void write_dataset(const std::string& path, const Dataset& ds);
Dataset read_dataset(const std::string& path);

}  // namespace mvlab
