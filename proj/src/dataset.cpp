#include "onrw/dataset.hpp"

#include "onrw/image.hpp"
#include "onrw/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace onrw::data {

const std::vector<std::string>& class_names()
{
    static const std::vector<std::string> names{"disc", "square", "triangle", "cross"};
    return names;
}

Tensor Dataset::batch(const std::vector<int>& indices) const
{
    const std::size_t plane = static_cast<std::size_t>(3) * resolution * resolution;
    Tensor out({static_cast<int>(indices.size()), 3, resolution, resolution});
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy_n(images.at(indices[i]).data(), plane, out.data() + i * plane);
    return out;
}

namespace {

struct Colour {
    float r, g, b;
};

Colour random_colour(Rng& rng, float lo, float hi)
{
    return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

// Signed inside test in shape-local coordinates (u, v in units of the radius).
bool inside(int label, float u, float v, float rot)
{
    const float c = std::cos(rot), s = std::sin(rot);
    const float x = c * u + s * v, y = -s * u + c * v;
    switch (label) {
    case 0:
        return x * x + y * y <= 1.0f;
    case 1:
        return std::fabs(x) <= 0.8f && std::fabs(y) <= 0.8f;
    case 2:
        // Upward triangle with vertices on the unit circle.
        return y >= -0.5f && y <= 1.0f && std::fabs(x) <= (1.0f - y) / std::sqrt(3.0f);
    default:
        return (std::fabs(x) <= 0.3f && std::fabs(y) <= 1.0f) || (std::fabs(y) <= 0.3f && std::fabs(x) <= 1.0f);
    }
}

}  // namespace

Tensor render_toy_image(int resolution, std::uint64_t seed, std::uint64_t index, int& label)
{
    Rng rng(derive_seed(seed, "toy-image", index));
    label = rng.uniform_int(0, kNumClasses - 1);
    const Colour bg0 = random_colour(rng, 0.1f, 0.6f), bg1 = random_colour(rng, 0.1f, 0.6f);
    Colour fg = random_colour(rng, 0.0f, 1.0f);
    // Keep the shape visibly different from the background.
    const float bright = bg0.r + bg0.g + bg0.b;
    if (std::fabs((fg.r + fg.g + fg.b) - bright) < 0.6f) fg = {fg.r > 0.5f ? 0.95f : 0.9f, fg.g * 0.4f + 0.5f, 1.0f - fg.b};
    const float angle = rng.uniform(0.0f, 6.2831853f);
    const float gx = std::cos(angle), gy = std::sin(angle);
    const float R = static_cast<float>(resolution);
    const float radius = rng.uniform(0.22f, 0.34f) * R;
    const float cx = rng.uniform(radius + 1.0f, R - radius - 1.0f);
    const float cy = rng.uniform(radius + 1.0f, R - radius - 1.0f);
    const float rot = label == 0 ? 0.0f : rng.uniform(-0.4f, 0.4f);

    Tensor img({1, 3, resolution, resolution});
    constexpr int ss = 4;
    for (int y = 0; y < resolution; ++y)
        for (int x = 0; x < resolution; ++x) {
            const float t = 0.5f + 0.5f * ((x / R - 0.5f) * gx + (y / R - 0.5f) * gy) * 1.4f;
            const Colour bg{bg0.r + (bg1.r - bg0.r) * t, bg0.g + (bg1.g - bg0.g) * t, bg0.b + (bg1.b - bg0.b) * t};
            int hits = 0;
            for (int sy = 0; sy < ss; ++sy)
                for (int sx = 0; sx < ss; ++sx) {
                    const float px = x + (sx + 0.5f) / ss, py = y + (sy + 0.5f) / ss;
                    hits += inside(label, (px - cx) / radius, (cy - py) / radius, rot);
                }
            const float a = static_cast<float>(hits) / (ss * ss);
            const float rgb[3] = {bg.r + (fg.r - bg.r) * a, bg.g + (fg.g - bg.g) * a, bg.b + (fg.b - bg.b) * a};
            for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = std::clamp(rgb[c], 0.0f, 1.0f) * 2.0f - 1.0f;
        }
    return image::quantize8(img);
}

Dataset make_toy_dataset(int count, int resolution, std::uint64_t seed, std::uint64_t first_index)
{
    if (count < 0) throw std::invalid_argument("make_toy_dataset: negative count");
    if (resolution < 8) throw std::invalid_argument("make_toy_dataset: resolution too small");
    Dataset ds;
    ds.resolution = resolution;
    for (int i = 0; i < count; ++i) {
        int label = 0;
        ds.images.push_back(render_toy_image(resolution, seed, first_index + i, label));
        ds.labels.push_back(label);
    }
    return ds;
}

void validate(const Dataset& ds)
{
    if (ds.images.empty()) throw std::invalid_argument("dataset is empty");
    if (ds.labels.size() != ds.images.size()) throw std::invalid_argument("dataset labels and images differ in count");
    const Shape want{1, 3, ds.resolution, ds.resolution};
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.images[i].shape() != want)
            throw std::invalid_argument("dataset image " + std::to_string(i) + " has shape " + shape_str(ds.images[i].shape()) +
                                        ", expected " + shape_str(want) + " (mixed resolutions?)");
        for (float v : ds.images[i].values())
            if (!(v >= -1.0f && v <= 1.0f)) throw std::invalid_argument("dataset image " + std::to_string(i) + " leaves [-1,1]");
        if (ds.labels[i] < 0 || ds.labels[i] >= kNumClasses)
            throw std::invalid_argument("dataset label out of range at " + std::to_string(i));
    }
}

Dataset load_folder(const std::string& dir)
{
    namespace fs = std::filesystem;
    std::ifstream in(fs::path(dir) / "labels.txt");
    if (!in) throw std::runtime_error("missing labels.txt in " + dir);
    Dataset ds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string file;
        int label = -1;
        if (!(ss >> file >> label)) throw std::runtime_error("bad labels.txt line: " + line);
        ds.images.push_back(image::load_png((fs::path(dir) / file).string()));
        ds.labels.push_back(label);
    }
    if (!ds.images.empty()) ds.resolution = ds.images.front().dim(2);
    validate(ds);
    return ds;
}

void save_folder(const Dataset& ds, const std::string& dir)
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream out(fs::path(dir) / "labels.txt");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "img_%05zu.png", i);
        image::save_png((fs::path(dir) / name).string(), ds.images[i]);
        out << name << ' ' << ds.labels[i] << '\n';
    }
}

}  // namespace onrw::data
