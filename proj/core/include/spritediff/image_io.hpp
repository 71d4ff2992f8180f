#pragma once

#include <string>

#include "spritediff/tensor.hpp"

namespace spritediff {

// Binary PPM (P6, maxval 255) with the fixed [-1,1] <-> [0,255] mapping;
// dependency-free and bit-exact for reproducibility checks.
void write_ppm(const std::string& path, const Tensor& img);  // [3,H,W]
Tensor read_ppm(const std::string& path);

// Binary PGM (P5) for masks.
void write_pgm(const std::string& path, const Tensor& mask);  // [1,H,W]
Tensor read_pgm(const std::string& path);

}  // namespace spritediff
