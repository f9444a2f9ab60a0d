#pragma once

// Sparse resampling maps shared by the differentiable attack layer and the
// evaluation transforms. Pixel centres sit at integer coordinates.

#include "onrw/ops.hpp"

#include <cstdint>
#include <memory>

namespace onrw::warp {

using MapPtr = std::shared_ptr<const ag::SparseMap>;

/// Bilinear resize with half-pixel centres (align_corners = false), edge clamped.
MapPtr resize_map(int in_h, int in_w, int out_h, int out_w);
/// Crops the square [y0, y0+side) x [x0, x0+side) and stretches it back to in_h x in_w.
MapPtr crop_expand_map(int in_h, int in_w, int y0, int x0, int side);
/// Counter-clockwise rotation about the image centre; taps falling outside the
/// image are dropped, i.e. zero padding in whatever space the map is applied.
MapPtr rotate_map(int h, int w, double degrees);
/// Area-ratio resize: down to round(sqrt(ratio) * side), then back up.
MapPtr area_resize_map(int h, int w, double area_ratio);
/// Side length kept by an area-ratio crop or resize.
int area_side(int side, double area_ratio);
/// Random placement for an area-ratio square crop.
MapPtr random_crop_map(int h, int w, double area_ratio, std::uint64_t seed);
/// Matrix product `outer` after `inner`.
MapPtr compose(const ag::SparseMap& outer, const ag::SparseMap& inner);

/// Applies the map to every plane of an NCHW tensor.
Tensor apply(const ag::SparseMap& map, const Tensor& x);

}  // namespace onrw::warp
