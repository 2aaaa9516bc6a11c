// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "idfc/tensor.hpp"

namespace idfc {

/// Binary P6 PPM, maxval 255. Values are clamped to [0,1] and quantized.
void write_ppm(const std::filesystem::path& path, const Tensor& rgb /* 1x3xHxW */);
Tensor read_ppm(const std::filesystem::path& path);

/// Single-channel PFM ("Pf"), 32-bit floats. Written little-endian with
/// scale header -1.0, rows bottom-to-top per the format convention.
/// Big-endian files (positive scale) are byte-swapped on read.
void write_pfm(const std::filesystem::path& path, const Tensor& depth /* 1x1xHxW */);
Tensor read_pfm(const std::filesystem::path& path);

std::pair<int, int> ppm_dims(const std::filesystem::path& path); // (height, width)
std::pair<int, int> pfm_dims(const std::filesystem::path& path);

} // namespace idfc
