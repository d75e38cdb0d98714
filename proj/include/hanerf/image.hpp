#pragma once

#include <cstdint>
#include <string>

#include "hanerf/tensor.hpp"

namespace hanerf {

// Images travel as [H,W,3] float tensors in [0,1]; masks as [H,W] floats
// where 1 = marked. PNG files are 8-bit.

Tensor<float> read_png_rgb(const std::string& path);
void write_png_rgb(const std::string& path, const Tensor<float>& image);

Tensor<float> read_png_gray(const std::string& path);
void write_png_gray(const std::string& path, const Tensor<float>& image);

// Rec.709 luma of an [H,W,3] image -> [H,W].
Tensor<float> luminance(const Tensor<float>& image);

}  // namespace hanerf
