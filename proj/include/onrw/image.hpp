#pragma once

// Image storage and codecs. Images in memory are [1,3,H,W] floats in [-1,1];
// 8-bit level b maps to b/127.5 - 1 exactly so a PNG round trip is lossless
// for already-quantized tensors.

#include "onrw/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace onrw::image {

/// Interleaved HWC 8-bit RGB buffer.
struct Rgb8 {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;
};

std::uint8_t to_level(float v);
inline float from_level(int b) { return static_cast<float>(b) / 127.5f - 1.0f; }

Rgb8 to_rgb8(const Tensor& img, int batch_index = 0);
Tensor from_rgb8(const Rgb8& rgb);

/// Snap every value to the nearest 8-bit level (what saving as PNG would keep).
Tensor quantize8(const Tensor& img);

void save_png(const std::string& path, const Tensor& img);
Tensor load_png(const std::string& path);

/// Baseline libjpeg encode. `subsample` selects 4:2:0 chroma, otherwise 4:4:4.
std::vector<std::uint8_t> encode_jpeg(const Rgb8& rgb, int quality, bool subsample = true);
Rgb8 decode_jpeg(const std::vector<std::uint8_t>& bytes);
/// Encode then decode through libjpeg.
Tensor jpeg_roundtrip(const Tensor& img, int quality, bool subsample = true);

/// IJG quality scaling of a base quantization table, entries clamped to [1,255].
std::array<int, 64> scaled_quant_table(const std::array<int, 64>& base, int quality);
extern const std::array<int, 64> kLumaQuant;
extern const std::array<int, 64> kChromaQuant;

}  // namespace onrw::image
