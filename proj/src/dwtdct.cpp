#include "onrw/dwtdct.hpp"

#include "onrw/image.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace onrw::eval {

namespace {

using Plane = std::vector<double>;

struct Yuv {
    int h = 0, w = 0;
    std::array<Plane, 3> p;
};

Yuv to_yuv(const Tensor& img)
{
    Yuv y;
    y.h = img.dim(2);
    y.w = img.dim(3);
    const std::size_t n = static_cast<std::size_t>(y.h) * y.w;
    for (auto& pl : y.p) pl.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = (img[i] + 1.0) * 127.5, g = (img[n + i] + 1.0) * 127.5, b = (img[2 * n + i] + 1.0) * 127.5;
        const double l = 0.299 * r + 0.587 * g + 0.114 * b;
        y.p[0][i] = l;
        y.p[1][i] = (b - l) * 0.492 + 128.0;
        y.p[2][i] = (r - l) * 0.877 + 128.0;
    }
    return y;
}

Tensor from_yuv(const Yuv& y)
{
    const std::size_t n = static_cast<std::size_t>(y.h) * y.w;
    Tensor out({1, 3, y.h, y.w});
    auto put = [](double v) { return image::from_level(static_cast<int>(std::clamp(std::nearbyint(v), 0.0, 255.0))); };
    for (std::size_t i = 0; i < n; ++i) {
        const double l = y.p[0][i];
        const double r = l + (y.p[2][i] - 128.0) / 0.877;
        const double b = l + (y.p[1][i] - 128.0) / 0.492;
        const double g = (l - 0.299 * r - 0.114 * b) / 0.587;
        out[i] = put(r);
        out[n + i] = put(g);
        out[2 * n + i] = put(b);
    }
    return out;
}

// Haar with orthonormal scaling: LL = (a + b + c + d) / 2.
struct Haar {
    int h = 0, w = 0;  // band size
    Plane ll, lh, hl, hh;
};

Haar dwt(const Plane& p, int h, int w)
{
    Haar b;
    b.h = h / 2;
    b.w = w / 2;
    const std::size_t n = static_cast<std::size_t>(b.h) * b.w;
    b.ll.resize(n);
    b.lh.resize(n);
    b.hl.resize(n);
    b.hh.resize(n);
    for (int y = 0; y < b.h; ++y)
        for (int x = 0; x < b.w; ++x) {
            const double a = p[(2 * y) * w + 2 * x], c = p[(2 * y) * w + 2 * x + 1];
            const double d = p[(2 * y + 1) * w + 2 * x], e = p[(2 * y + 1) * w + 2 * x + 1];
            const std::size_t i = static_cast<std::size_t>(y) * b.w + x;
            b.ll[i] = (a + c + d + e) / 2.0;
            b.lh[i] = (a + c - d - e) / 2.0;
            b.hl[i] = (a - c + d - e) / 2.0;
            b.hh[i] = (a - c - d + e) / 2.0;
        }
    return b;
}

void idwt(const Haar& b, Plane& p, int w)
{
    for (int y = 0; y < b.h; ++y)
        for (int x = 0; x < b.w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * b.w + x;
            const double ll = b.ll[i], lh = b.lh[i], hl = b.hl[i], hh = b.hh[i];
            p[(2 * y) * w + 2 * x] = (ll + lh + hl + hh) / 2.0;
            p[(2 * y) * w + 2 * x + 1] = (ll + lh - hl - hh) / 2.0;
            p[(2 * y + 1) * w + 2 * x] = (ll - lh + hl - hh) / 2.0;
            p[(2 * y + 1) * w + 2 * x + 1] = (ll - lh - hl + hh) / 2.0;
        }
}

// Orthonormal DCT-II basis for an n-point transform.
std::vector<double> dct_basis(int n)
{
    std::vector<double> c(static_cast<std::size_t>(n) * n);
    for (int k = 0; k < n; ++k)
        for (int i = 0; i < n; ++i)
            c[k * n + i] = (k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n)) * std::cos(std::numbers::pi * (2 * i + 1) * k / (2.0 * n));
    return c;
}

// out = C X C^T (forward) or C^T X C (inverse) for an n x n block.
std::vector<double> dct2(const std::vector<double>& x, int n, bool inverse)
{
    static thread_local std::vector<double> c;
    static thread_local int cn = 0;
    if (cn != n) {
        c = dct_basis(n);
        cn = n;
    }
    auto m = [&](int a, int b) { return inverse ? c[b * n + a] : c[a * n + b]; };
    std::vector<double> t(x.size(), 0.0), out(x.size(), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) t[i * n + j] += m(i, k) * x[k * n + j];
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) out[i * n + j] += t[i * n + k] * m(j, k);
    return out;
}

int largest_ac(const std::vector<double>& blk)
{
    int pos = 1;
    for (std::size_t i = 2; i < blk.size(); ++i)
        if (std::fabs(blk[i]) > std::fabs(blk[pos])) pos = static_cast<int>(i);
    return pos;
}

void check_geometry(int h, int w, const DwtDctConfig& cfg)
{
    if (cfg.block < 2) throw std::invalid_argument("dwtdct: block must be >= 2");
    if (h % (2 * cfg.block) || w % (2 * cfg.block))
        throw std::invalid_argument("dwtdct: image side must be a multiple of " + std::to_string(2 * cfg.block));
}

// Visits every block of every active plane in embedding order.
template <class Fn>
void for_blocks(Yuv& yuv, const DwtDctConfig& cfg, bool write, Fn&& fn)
{
    int num = 0;
    for (int ch = 0; ch < 3; ++ch) {
        if (cfg.scales[ch] <= 0.0) continue;
        Haar band = dwt(yuv.p[ch], yuv.h, yuv.w);
        const int n = cfg.block;
        for (int by = 0; by < band.h / n; ++by)
            for (int bx = 0; bx < band.w / n; ++bx) {
                std::vector<double> blk(static_cast<std::size_t>(n) * n);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < n; ++j) blk[i * n + j] = band.ll[(by * n + i) * band.w + bx * n + j];
                std::vector<double> d = dct2(blk, n, false);
                if (fn(d, num++, cfg.scales[ch]) && write) {
                    blk = dct2(d, n, true);
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < n; ++j) band.ll[(by * n + i) * band.w + bx * n + j] = blk[i * n + j];
                }
            }
        if (write) idwt(band, yuv.p[ch], yuv.w);
    }
}

}  // namespace

int dwtdct_capacity(int height, int width, const DwtDctConfig& cfg)
{
    check_geometry(height, width, cfg);
    int planes = 0;
    for (double s : cfg.scales) planes += s > 0.0;
    return planes * (height / 2 / cfg.block) * (width / 2 / cfg.block);
}

Tensor dwtdct_embed(const Tensor& image, const codec::BitMessage& message, const DwtDctConfig& cfg)
{
    if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) throw std::invalid_argument("dwtdct_embed: expected [1,3,H,W]");
    const int k = message.size();
    if (k < 1) throw std::invalid_argument("dwtdct_embed: empty message");
    if (dwtdct_capacity(image.dim(2), image.dim(3), cfg) < k)
        throw std::invalid_argument("dwtdct_embed: " + std::to_string(k) + " bits exceed capacity " +
                                    std::to_string(dwtdct_capacity(image.dim(2), image.dim(3), cfg)));
    Yuv yuv = to_yuv(image);
    for_blocks(yuv, cfg, true, [&](std::vector<double>& d, int num, double scale) {
        const int pos = largest_ac(d);
        const double bit = message.bits[num % k];
        const double mag = std::fabs(d[pos]);
        const double q = (std::floor(mag / scale) + 0.25 + 0.5 * bit) * scale;
        d[pos] = d[pos] >= 0.0 ? q : -q;
        return true;
    });
    return from_yuv(yuv);
}

codec::BitMessage dwtdct_extract(const Tensor& image, int k, const DwtDctConfig& cfg)
{
    if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3) throw std::invalid_argument("dwtdct_extract: expected [1,3,H,W]");
    if (k < 1) throw std::invalid_argument("dwtdct_extract: k must be positive");
    if (dwtdct_capacity(image.dim(2), image.dim(3), cfg) < k) throw std::invalid_argument("dwtdct_extract: k exceeds capacity");
    Yuv yuv = to_yuv(image);
    std::vector<double> score(k, 0.0);
    std::vector<int> votes(k, 0);
    for_blocks(yuv, cfg, false, [&](std::vector<double>& d, int num, double scale) {
        const double mag = std::fabs(d[largest_ac(d)]);
        score[num % k] += std::fmod(mag, scale) > 0.5 * scale ? 1.0 : 0.0;
        ++votes[num % k];
        return false;
    });
    codec::BitMessage m;
    for (int i = 0; i < k; ++i) m.bits.push_back(score[i] / votes[i] > 0.5 ? 1 : 0);
    return m;
}

}  // namespace onrw::eval
