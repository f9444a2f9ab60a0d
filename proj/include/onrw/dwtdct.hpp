#pragma once

// Classical blind DWT-DCT watermark: per 4x4 block of the Haar LL band of
// the U and V planes, the largest AC DCT coefficient is quantized so that
// its magnitude modulo `scale` encodes one bit. Bits repeat cyclically over
// the blocks and extraction takes a majority vote.

#include "onrw/codec.hpp"

#include <array>

namespace onrw::eval {

struct DwtDctConfig {
    std::array<double, 3> scales = {0.0, 36.0, 36.0};  // Y, U, V; 0 leaves a plane untouched
    int block = 4;
};

/// Number of blocks available for bits at this resolution.
int dwtdct_capacity(int height, int width, const DwtDctConfig& cfg = {});
/// Throws when the message does not fit or the size is not a multiple of 2*block.
Tensor dwtdct_embed(const Tensor& image, const codec::BitMessage& message, const DwtDctConfig& cfg = {});
codec::BitMessage dwtdct_extract(const Tensor& image, int k, const DwtDctConfig& cfg = {});

}  // namespace onrw::eval
