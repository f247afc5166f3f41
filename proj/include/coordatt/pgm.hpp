#pragma once

#include "coordatt/tensor.hpp"

#include <string>

namespace coordatt {

// Netpbm grayscale/color input (P2/P3 ascii, P5/P6 binary, maxval <= 255),
// scaled to [0,1]. Returns [1,1,H,W] or [1,3,H,W].
Tensor read_image(const std::string& path);

// Binary P5 output of a rank-2 [H,W] map, clamped to [0,1], maxval 255.
void write_pgm(const std::string& path, const Tensor& map);

// Text matrix, one row per line, 6 significant digits.
std::string matrix_text(const Tensor& map);

} // namespace coordatt
