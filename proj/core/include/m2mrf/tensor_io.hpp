#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "m2mrf/tensor.hpp"

namespace m2mrf::io {

// "M2MT" tensor container: magic 'M','2','M','T'; u8 version (1); u8 dtype
// (0 = f64); u8 ndim; ndim u32 little-endian dims; row-major f64 payload,
// little-endian. Decoders reject anything else, reporting the byte offset,
// and refuse trailing bytes.

std::vector<uint8_t> encode_m2mt(const Tensor& t);
Tensor decode_m2mt(const uint8_t* bytes, size_t size, const std::string& origin);

void write_m2mt(const std::string& path, const Tensor& t);
Tensor read_m2mt(const std::string& path);

// Grayscale PGM (P5, maxval 255) from an (H, W) or (H, W, 1) map; values
// clamped from [0, 1]. For eyeballing masks, not a round-trip format.
void write_pgm(const std::string& path, const Tensor& gray);

// Color PPM (P6, maxval 255) from an (H, W, 3) map in [0, 1].
void write_ppm(const std::string& path, const Tensor& rgb);

}  // namespace m2mrf::io
