#pragma once

// Real (non-differentiable) image transformations at the evaluation
// parameter points. Every output is an 8-bit image at the input resolution.

#include "onrw/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace onrw::eval {

enum class TransformKind { none, crop, rotate, resize, brightness, jpeg, noise, filter };

struct TransformPoint {
    std::string name;
    TransformKind kind = TransformKind::none;
    double param = 0.0;  // area ratio, degrees, factor, quality, noise amplitude or kernel size
};

/// The thirteen robustness points in report order, None last.
const std::vector<TransformPoint>& suite_points();
/// Throws std::invalid_argument for an unknown label.
const TransformPoint& find_point(const std::string& name);

/// Applies `point` to every image in the batch. `seed` drives crop placement
/// and noise; other kinds ignore it.
Tensor transform(const TransformPoint& point, const Tensor& image, std::uint64_t seed);

}  // namespace onrw::eval
