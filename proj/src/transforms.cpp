#include "onrw/transforms.hpp"

#include "onrw/image.hpp"
#include "onrw/rng.hpp"
#include "onrw/warp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace onrw::eval {

const std::vector<TransformPoint>& suite_points()
{
    static const std::vector<TransformPoint> points = {
        {"Crop_01", TransformKind::crop, 0.1},
        {"Crop_05", TransformKind::crop, 0.5},
        {"Rot_25", TransformKind::rotate, 25.0},
        {"Rot_90", TransformKind::rotate, 90.0},
        {"Resize_0.3", TransformKind::resize, 0.3},
        {"Resize_0.7", TransformKind::resize, 0.7},
        {"Brightness_1.5", TransformKind::brightness, 1.5},
        {"Brightness_2.0", TransformKind::brightness, 2.0},
        {"JPEG_80", TransformKind::jpeg, 80.0},
        {"JPEG_50", TransformKind::jpeg, 50.0},
        {"Noise", TransformKind::noise, 10.0},
        {"Filter", TransformKind::filter, 3.0},
        {"None", TransformKind::none, 0.0},
    };
    return points;
}

const TransformPoint& find_point(const std::string& name)
{
    for (const auto& p : suite_points())
        if (p.name == name) return p;
    throw std::invalid_argument("unknown transform '" + name + "'");
}

namespace {

// Works on 8-bit levels held as floats, one plane at a time.
using Levels = std::vector<float>;

Levels to_levels(const Tensor& img)
{
    Levels l(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) l[i] = static_cast<float>((img[i] + 1.0) * 127.5);
    return l;
}

Tensor from_levels(const Levels& l, const Shape& shape)
{
    Tensor t(shape);
    for (std::size_t i = 0; i < l.size(); ++i) t[i] = image::from_level(static_cast<int>(std::clamp(std::nearbyint(l[i]), 0.0f, 255.0f)));
    return t;
}

Tensor resample_levels(const Tensor& img, const ag::SparseMap& map)
{
    // Resampling in level space: dropped taps contribute 0, i.e. black.
    Levels l = to_levels(img);
    Tensor planes(img.shape(), l);
    const Tensor out = warp::apply(map, planes);
    Levels o(out.values().begin(), out.values().end());
    return from_levels(o, img.shape());
}

int reflect101(int i, int n)
{
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
    return i;
}

}  // namespace

Tensor transform(const TransformPoint& point, const Tensor& image, std::uint64_t seed)
{
    if (image.rank() != 4 || image.dim(1) != 3) throw std::invalid_argument("transform: expected [B,3,H,W]");
    const int h = image.dim(2), w = image.dim(3);
    switch (point.kind) {
    case TransformKind::none:
        return image;
    case TransformKind::crop:
        return resample_levels(image, *warp::random_crop_map(h, w, point.param, seed));
    case TransformKind::rotate:
        return resample_levels(image, *warp::rotate_map(h, w, point.param));
    case TransformKind::resize:
        return resample_levels(image, *warp::area_resize_map(h, w, point.param));
    case TransformKind::brightness: {
        // Blend towards black with the given factor, as image editors do.
        Levels l = to_levels(image);
        for (auto& v : l) v *= static_cast<float>(point.param);
        return from_levels(l, image.shape());
    }
    case TransformKind::jpeg:
        return image::jpeg_roundtrip(image, static_cast<int>(std::lround(point.param)), true);
    case TransformKind::noise: {
        Rng rng(seed);
        Levels l = to_levels(image);
        const float a = static_cast<float>(point.param);
        for (auto& v : l) v += rng.uniform(-a, a);
        return from_levels(l, image.shape());
    }
    case TransformKind::filter: {
        const int k = static_cast<int>(point.param), r = k / 2;
        const Levels l = to_levels(image);
        Levels o(l.size());
        const std::size_t plane = static_cast<std::size_t>(h) * w;
        for (std::size_t p = 0; p < l.size() / plane; ++p)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double s = 0.0;
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) s += l[p * plane + reflect101(y + dy, h) * w + reflect101(x + dx, w)];
                    o[p * plane + y * w + x] = static_cast<float>(s / (k * k));
                }
        return from_levels(o, image.shape());
    }
    }
    throw std::logic_error("transform: unhandled kind");
}

}  // namespace onrw::eval
