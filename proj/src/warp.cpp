#include "onrw/warp.hpp"

#include "onrw/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>
#include <numbers>
#include <stdexcept>

namespace onrw::warp {

namespace {

using Source = std::function<std::pair<double, double>(int, int)>;

// Each output pixel takes a bilinear sample of the source at src(y, x).
// With `clamp` the coordinate is clamped into [lo, hi] per axis; otherwise
// taps outside the image are dropped.
MapPtr bilinear(int in_h, int in_w, int out_h, int out_w, const Source& src, bool clamp, int y_lo = 0, int y_hi = -1,
                int x_lo = 0, int x_hi = -1)
{
    if (y_hi < 0) y_hi = in_h - 1;
    if (x_hi < 0) x_hi = in_w - 1;
    auto m = std::make_shared<ag::SparseMap>();
    m->in_h = in_h;
    m->in_w = in_w;
    m->out_h = out_h;
    m->out_w = out_w;
    m->row_begin.reserve(static_cast<std::size_t>(out_h) * out_w + 1);
    m->row_begin.push_back(0);
    for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
            auto [sy, sx] = src(y, x);
            if (clamp) {
                sy = std::clamp(sy, static_cast<double>(y_lo), static_cast<double>(y_hi));
                sx = std::clamp(sx, static_cast<double>(x_lo), static_cast<double>(x_hi));
            }
            const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
            const double fy = sy - y0, fx = sx - x0;
            const int ys[2] = {y0, y0 + 1}, xs[2] = {x0, x0 + 1};
            const double wy[2] = {1.0 - fy, fy}, wx[2] = {1.0 - fx, fx};
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b) {
                    const double wgt = wy[a] * wx[b];
                    if (wgt <= 1e-12) continue;
                    const int yy = ys[a], xx = xs[b];
                    if (yy < 0 || yy >= in_h || xx < 0 || xx >= in_w) continue;
                    m->index.push_back(yy * in_w + xx);
                    m->weight.push_back(static_cast<float>(wgt));
                }
            m->row_begin.push_back(static_cast<int>(m->index.size()));
        }
    return m;
}

}  // namespace

int area_side(int side, double area_ratio)
{
    if (!(area_ratio > 0.0 && area_ratio <= 1.0)) throw std::invalid_argument("area ratio must lie in (0,1]");
    return std::clamp(static_cast<int>(std::lround(std::sqrt(area_ratio) * side)), 1, side);
}

MapPtr resize_map(int in_h, int in_w, int out_h, int out_w)
{
    const double sy = static_cast<double>(in_h) / out_h, sx = static_cast<double>(in_w) / out_w;
    return bilinear(in_h, in_w, out_h, out_w, [=](int y, int x) { return std::pair{(y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5}; },
                    true);
}

MapPtr crop_expand_map(int in_h, int in_w, int y0, int x0, int side)
{
    if (side < 1 || y0 < 0 || x0 < 0 || y0 + side > in_h || x0 + side > in_w) throw std::invalid_argument("crop window outside image");
    const double sy = static_cast<double>(side) / in_h, sx = static_cast<double>(side) / in_w;
    return bilinear(
        in_h, in_w, in_h, in_w, [=](int y, int x) { return std::pair{y0 + (y + 0.5) * sy - 0.5, x0 + (x + 0.5) * sx - 0.5}; }, true,
        y0, y0 + side - 1, x0, x0 + side - 1);
}

MapPtr random_crop_map(int h, int w, double area_ratio, std::uint64_t seed)
{
    const int side = area_side(std::min(h, w), area_ratio);
    Rng rng(seed);
    const int y0 = rng.uniform_int(0, h - side), x0 = rng.uniform_int(0, w - side);
    return crop_expand_map(h, w, y0, x0, side);
}

MapPtr rotate_map(int h, int w, double degrees)
{
    const double th = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
    // Output (x, y) with y pointing down; a counter-clockwise turn of the
    // content samples the source at the inverse rotation.
    return bilinear(
        h, w, h, w,
        [=](int y, int x) {
            const double dx = x - cx, dy = y - cy;
            return std::pair{cy - s * dx + c * dy, cx + c * dx + s * dy};
        },
        false);
}

MapPtr compose(const ag::SparseMap& outer, const ag::SparseMap& inner)
{
    if (outer.in_h != inner.out_h || outer.in_w != inner.out_w) throw std::invalid_argument("compose: size mismatch");
    auto m = std::make_shared<ag::SparseMap>();
    m->in_h = inner.in_h;
    m->in_w = inner.in_w;
    m->out_h = outer.out_h;
    m->out_w = outer.out_w;
    m->row_begin.push_back(0);
    const int n = outer.out_h * outer.out_w;
    std::vector<double> acc(static_cast<std::size_t>(inner.in_h) * inner.in_w, 0.0);
    std::vector<int> touched;
    for (int o = 0; o < n; ++o) {
        touched.clear();
        for (int j = outer.row_begin[o]; j < outer.row_begin[o + 1]; ++j) {
            const int mid = outer.index[j];
            for (int i = inner.row_begin[mid]; i < inner.row_begin[mid + 1]; ++i) {
                const int src = inner.index[i];
                if (acc[src] == 0.0) touched.push_back(src);
                acc[src] += static_cast<double>(outer.weight[j]) * inner.weight[i];
            }
        }
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        for (int src : touched) {
            m->index.push_back(src);
            m->weight.push_back(static_cast<float>(acc[src]));
            acc[src] = 0.0;
        }
        m->row_begin.push_back(static_cast<int>(m->index.size()));
    }
    return m;
}

MapPtr area_resize_map(int h, int w, double area_ratio)
{
    const double r = std::sqrt(area_ratio);
    if (!(area_ratio > 0.0 && area_ratio <= 1.0)) throw std::invalid_argument("area ratio must lie in (0,1]");
    const int nh = std::max(1, static_cast<int>(std::lround(r * h))), nw = std::max(1, static_cast<int>(std::lround(r * w)));
    auto down = resize_map(h, w, nh, nw);
    auto up = resize_map(nh, nw, h, w);
    return compose(*up, *down);
}

Tensor apply(const ag::SparseMap& map, const Tensor& x)
{
    if (x.rank() != 4 || x.dim(2) != map.in_h || x.dim(3) != map.in_w) throw std::invalid_argument("warp::apply: shape mismatch");
    const int planes = x.dim(0) * x.dim(1);
    const std::size_t in_sz = static_cast<std::size_t>(map.in_h) * map.in_w, out_sz = static_cast<std::size_t>(map.out_h) * map.out_w;
    Tensor y({x.dim(0), x.dim(1), map.out_h, map.out_w});
    for (int p = 0; p < planes; ++p)
        for (std::size_t o = 0; o < out_sz; ++o) {
            float s = 0.0f;
            for (int j = map.row_begin[o]; j < map.row_begin[o + 1]; ++j) s += map.weight[j] * x[p * in_sz + map.index[j]];
            y[p * out_sz + o] = s;
        }
    return y;
}

}  // namespace onrw::warp
