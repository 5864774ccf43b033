#pragma once

#include <cstdint>
#include <string>

#include "hyperace/tensor.hpp"

namespace hyperace {

/// Binary PPM (P6, maxval <= 255) to [1, 3, H, W] with values in [0, 1].
Tensor read_ppm(const std::string& path);
/// [1, 3, H, W] (values clamped to [0, 1]) to binary PPM.
void write_ppm(const Tensor& image, const std::string& path);

/// Header-less little-endian float32 NCHW file with N = 1, C = 3.
Tensor read_raw(const std::string& path, std::int64_t height, std::int64_t width);
void write_raw(const Tensor& image, const std::string& path);

/// Dispatches on extension: .ppm, else raw (height and width required).
Tensor read_image(const std::string& path, std::int64_t height = 0, std::int64_t width = 0);

/// Pads bottom and right with `fill` up to multiples of `multiple`.
Tensor pad_to_multiple(const Tensor& image, std::int64_t multiple, double fill = 0.0);

}  // namespace hyperace
