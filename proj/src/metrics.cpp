#include "onrw/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace onrw::eval {

namespace {

constexpr int kWin = 11;

double level(float v) { return (static_cast<double>(v) + 1.0) * 127.5; }

void require_same(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) throw std::invalid_argument("quality metrics: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    if (a.rank() != 4) throw std::invalid_argument("quality metrics: expected NCHW images");
}

std::array<double, kWin * kWin> gaussian_window()
{
    std::array<double, kWin> g{};
    double s = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - kWin / 2;
        g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        s += g[i];
    }
    std::array<double, kWin * kWin> w{};
    for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) w[i * kWin + j] = g[i] * g[j] / (s * s);
    return w;
}

}  // namespace

nlohmann::json Quality::to_json() const { return {{"psnr", psnr}, {"ssim", ssim}, {"linf", linf}, {"mse", mse}}; }

double psnr_from_mse(double mse)
{
    if (!(mse > 0.0)) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double ssim(const Tensor& a, const Tensor& b)
{
    require_same(a, b);
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    if (h < kWin || w < kWin) throw std::invalid_argument("ssim: image smaller than the 11x11 window");
    static const auto win = gaussian_window();
    const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
    double total = 0.0;
    long count = 0;
    for (int p = 0; p < n * c; ++p) {
        const float* pa = a.data() + static_cast<std::size_t>(p) * h * w;
        const float* pb = b.data() + static_cast<std::size_t>(p) * h * w;
        for (int y = 0; y + kWin <= h; ++y)
            for (int x = 0; x + kWin <= w; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int i = 0; i < kWin; ++i)
                    for (int j = 0; j < kWin; ++j) {
                        const double g = win[i * kWin + j];
                        const double va = level(pa[(y + i) * w + x + j]), vb = level(pb[(y + i) * w + x + j]);
                        ma += g * va;
                        mb += g * vb;
                        saa += g * va * va;
                        sbb += g * vb * vb;
                        sab += g * va * vb;
                    }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    }
    return total / count;
}

Quality quality_metrics(const Tensor& a, const Tensor& b)
{
    require_same(a, b);
    Quality q;
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = level(a[i]) - level(b[i]);
        se += d * d;
        q.linf = std::max(q.linf, std::fabs(d));
    }
    q.mse = se / static_cast<double>(a.size());
    q.psnr = psnr_from_mse(q.mse);
    q.ssim = ssim(a, b);
    return q;
}

}  // namespace onrw::eval
