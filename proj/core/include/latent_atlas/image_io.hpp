#pragma once

#include <filesystem>

#include "latent_atlas/tensor.hpp"

namespace latent_atlas {

/// Maps a pixel value in [-1, 1] to a byte via (v + 1) * 127.5 with
/// round-half-even; out-of-range inputs clamp.
int quantize_unit(float v);

/// Inverse of quantize_unit up to quantization: byte / 127.5 - 1.
float dequantize_unit(int byte);

/// Writes a [3, H, W] tensor with values in [-1, 1] as an 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const Tensor<float>& image);

/// Reads a PNG (any libpng-supported layout) as a [3, H, W] tensor in
/// [-1, 1]. Gray and paletted images expand to RGB; alpha is dropped.
Tensor<float> read_png(const std::filesystem::path& path);

}  // namespace latent_atlas
