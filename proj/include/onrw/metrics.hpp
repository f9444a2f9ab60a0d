#pragma once

// Image quality metrics in 8-bit units: [-1,1] tensors are mapped to [0,255]
// before comparison.

#include "onrw/tensor.hpp"

#include <nlohmann/json.hpp>

namespace onrw::eval {

struct Quality {
    double psnr = 0.0;
    double ssim = 0.0;
    double linf = 0.0;
    double mse = 0.0;

    nlohmann::json to_json() const;
};

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(255^2 / mse), capped at kPsnrCap (identical images included).
double psnr_from_mse(double mse);

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, over valid window positions, averaged over channels and batch.
double ssim(const Tensor& a, const Tensor& b);

Quality quality_metrics(const Tensor& a, const Tensor& b);

}  // namespace onrw::eval
