#include "onrw/plot.hpp"

#include "onrw/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <stdexcept>

namespace onrw::eval {

namespace {

using Color = std::array<std::uint8_t, 3>;

// 6x11 bitmap glyphs for ASCII 32..126, one byte per row, bit 5 = leftmost column.
constexpr std::uint8_t kGlyphs[95][11] = {
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x18, 0x18, 0x18, 0x18, 0x00, 0x18, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x14, 0x14, 0x14, 0x00, 0x00, 0x00, 0x00, 0x00},
    {0x00, 0x00, 0x14, 0x14, 0x3e, 0x14, 0x14, 0x3e, 0x14, 0x14, 0x00},
    {0x00, 0x08, 0x1e, 0x32, 0x3c, 0x1e, 0x06, 0x36, 0x3c, 0x08, 0x00},
    {0x00, 0x00, 0x38, 0x2a, 0x3c, 0x08, 0x1e, 0x2a, 0x0e, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x1c, 0x30, 0x18, 0x3e, 0x2c, 0x3e, 0x00, 0x00},
    {0x00, 0x00, 0x0c, 0x08, 0x10, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00},
    {0x00, 0x00, 0x04, 0x08, 0x18, 0x18, 0x18, 0x18, 0x08, 0x04, 0x00},
    {0x00, 0x00, 0x10, 0x08, 0x0c, 0x0c, 0x0c, 0x0c, 0x08, 0x10, 0x00},
    {0x00, 0x00, 0x08, 0x3c, 0x18, 0x24, 0x00, 0x00, 0x00, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x08, 0x08, 0x3e, 0x08, 0x08, 0x00, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x0c, 0x08, 0x10},
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x3e, 0x00, 0x00, 0x00, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x18, 0x00, 0x00},
    {0x00, 0x00, 0x02, 0x02, 0x04, 0x04, 0x08, 0x08, 0x10, 0x10, 0x00},
    {0x00, 0x00, 0x1c, 0x36, 0x36, 0x36, 0x36, 0x36, 0x1c, 0x00, 0x00},
    {0x00, 0x00, 0x0c, 0x3c, 0x0c, 0x0c, 0x0c, 0x0c, 0x3f, 0x00, 0x00},
    {0x00, 0x00, 0x1c, 0x36, 0x06, 0x0c, 0x18, 0x36, 0x3e, 0x00, 0x00},
    {0x00, 0x00, 0x1c, 0x36, 0x06, 0x1c, 0x06, 0x36, 0x1c, 0x00, 0x00},
    {0x00, 0x00, 0x06, 0x0e, 0x16, 0x36, 0x3f, 0x06, 0x06, 0x00, 0x00},
    {0x00, 0x00, 0x3e, 0x30, 0x3c, 0x36, 0x06, 0x26, 0x3c, 0x00, 0x00},
    {0x00, 0x00, 0x1c, 0x36, 0x30, 0x3c, 0x36, 0x36, 0x1c, 0x00, 0x00},
    {0x00, 0x00, 0x3e, 0x36, 0x06, 0x0c, 0x0c, 0x18, 0x18, 0x00, 0x00},
    {0x00, 0x00, 0x1c, 0x36, 0x36, 0x1c, 0x36, 0x36, 0x1c, 0x00, 0x00},
    {0x00, 0x00, 0x1c, 0x36, 0x36, 0x1e, 0x06, 0x36, 0x1c, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x18, 0x00, 0x00, 0x18, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x18, 0x00, 0x00, 0x18, 0x10, 0x20},
    {0x00, 0x00, 0x00, 0x0c, 0x18, 0x30, 0x18, 0x0c, 0x00, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x3c, 0x00, 0x3c, 0x00, 0x00, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x18, 0x0c, 0x06, 0x0c, 0x18, 0x00, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x1c, 0x26, 0x0c, 0x18, 0x00, 0x18, 0x00, 0x00},
    {0x00, 0x00, 0x1c, 0x32, 0x26, 0x2a, 0x2a, 0x27, 0x30, 0x1c, 0x00},
    {0x00, 0x00, 0x00, 0x3c, 0x1c, 0x14, 0x3e, 0x36, 0x37, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x3c, 0x36, 0x3c, 0x36, 0x36, 0x3c, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x1e, 0x36, 0x30, 0x30, 0x36, 0x1c, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x3c, 0x36, 0x36, 0x36, 0x36, 0x3c, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x3e, 0x30, 0x3c, 0x30, 0x36, 0x3e, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x3e, 0x30, 0x3c, 0x30, 0x30, 0x38, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x1c, 0x36, 0x30, 0x3e, 0x36, 0x1e, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x37, 0x36, 0x3e, 0x36, 0x36, 0x37, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x3c, 0x18, 0x18, 0x18, 0x18, 0x3c, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x1e, 0x0c, 0x0c, 0x2c, 0x2c, 0x38, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x36, 0x34, 0x38, 0x3c, 0x36, 0x3b, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x38, 0x30, 0x30, 0x30, 0x36, 0x3e, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x22, 0x36, 0x36, 0x3e, 0x2a, 0x2a, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x37, 0x3a, 0x3a, 0x36, 0x36, 0x32, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x1c, 0x36, 0x36, 0x36, 0x36, 0x1c, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x3c, 0x36, 0x36, 0x3c, 0x30, 0x38, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x1c, 0x36, 0x36, 0x36, 0x36, 0x1c, 0x06, 0x00},
    {0x00, 0x00, 0x00, 0x3c, 0x36, 0x36, 0x3c, 0x36, 0x3b, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x1e, 0x32, 0x3c, 0x0e, 0x26, 0x3c, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x3e, 0x1a, 0x18, 0x18, 0x18, 0x3c, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x37, 0x36, 0x36, 0x36, 0x36, 0x1c, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x37, 0x36, 0x14, 0x1c, 0x1c, 0x08, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x2b, 0x2a, 0x2a, 0x3e, 0x1c, 0x14, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x33, 0x1e, 0x0c, 0x0c, 0x1e, 0x33, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x33, 0x33, 0x1e, 0x0c, 0x0c, 0x1e, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x3e, 0x36, 0x0c, 0x18, 0x36, 0x3e, 0x00, 0x00},
    {0x00, 0x00, 0x1c, 0x18, 0x18, 0x18, 0x18, 0x18, 0x18, 0x1c, 0x00},
    {0x00, 0x00, 0x20, 0x20, 0x10, 0x10, 0x08, 0x08, 0x04, 0x04, 0x00},
    {0x00, 0x00, 0x1c, 0x0c, 0x0c, 0x0c, 0x0c, 0x0c, 0x0c, 0x1c, 0x00},
    {0x00, 0x00, 0x08, 0x1c, 0x36, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x3f},
    {0x00, 0x00, 0x18, 0x08, 0x04, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x1c, 0x36, 0x1e, 0x36, 0x3f, 0x00, 0x00},
    {0x00, 0x00, 0x30, 0x30, 0x3c, 0x36, 0x36, 0x36, 0x3c, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x1c, 0x36, 0x30, 0x36, 0x1c, 0x00, 0x00},
    {0x00, 0x00, 0x0e, 0x06, 0x1e, 0x36, 0x36, 0x36, 0x1f, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x1c, 0x36, 0x3e, 0x30, 0x1e, 0x00, 0x00},
    {0x00, 0x00, 0x0e, 0x18, 0x3e, 0x18, 0x18, 0x18, 0x3e, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x1b, 0x36, 0x36, 0x36, 0x1e, 0x06, 0x3c},
    {0x00, 0x00, 0x30, 0x30, 0x3c, 0x36, 0x36, 0x36, 0x36, 0x00, 0x00},
    {0x00, 0x00, 0x0c, 0x00, 0x3c, 0x0c, 0x0c, 0x0c, 0x3f, 0x00, 0x00},
    {0x00, 0x00, 0x0c, 0x00, 0x3c, 0x0c, 0x0c, 0x0c, 0x0c, 0x0c, 0x38},
    {0x00, 0x00, 0x30, 0x30, 0x36, 0x3c, 0x38, 0x3c, 0x37, 0x00, 0x00},
    {0x00, 0x00, 0x3c, 0x0c, 0x0c, 0x0c, 0x0c, 0x0c, 0x3f, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x3c, 0x3e, 0x2a, 0x2a, 0x2a, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x2c, 0x36, 0x36, 0x36, 0x36, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x1c, 0x36, 0x36, 0x36, 0x1c, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x3c, 0x36, 0x36, 0x36, 0x3c, 0x30, 0x38},
    {0x00, 0x00, 0x00, 0x00, 0x1b, 0x36, 0x36, 0x36, 0x1e, 0x06, 0x0f},
    {0x00, 0x00, 0x00, 0x00, 0x37, 0x1d, 0x18, 0x18, 0x3c, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x1e, 0x38, 0x1e, 0x07, 0x3e, 0x00, 0x00},
    {0x00, 0x00, 0x18, 0x18, 0x3e, 0x18, 0x18, 0x1b, 0x0e, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x36, 0x36, 0x36, 0x36, 0x1f, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x36, 0x36, 0x1c, 0x1c, 0x08, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x2b, 0x2a, 0x3e, 0x1e, 0x14, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x3b, 0x1e, 0x0c, 0x1e, 0x37, 0x00, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x37, 0x36, 0x36, 0x14, 0x1c, 0x18, 0x30},
    {0x00, 0x00, 0x00, 0x00, 0x3e, 0x2c, 0x18, 0x36, 0x3e, 0x00, 0x00},
    {0x00, 0x00, 0x06, 0x0c, 0x0c, 0x18, 0x0c, 0x0c, 0x0c, 0x06, 0x00},
    {0x00, 0x00, 0x00, 0x08, 0x08, 0x08, 0x08, 0x08, 0x08, 0x08, 0x00},
    {0x00, 0x00, 0x30, 0x18, 0x18, 0x0c, 0x18, 0x18, 0x18, 0x30, 0x00},
    {0x00, 0x00, 0x00, 0x00, 0x1a, 0x2c, 0x00, 0x00, 0x00, 0x00, 0x00},
};
constexpr Color kInk = {30, 30, 30};
constexpr Color kGrid = {225, 225, 225};
const std::vector<Color> kPalette = {{31, 119, 180}, {214, 39, 40}, {44, 160, 44}, {255, 127, 14}, {148, 103, 189}, {140, 86, 75}};

std::string fmt(double v, const char* f)
{
    char b[32];
    std::snprintf(b, sizeof b, f, v);
    return b;
}

// Plot area shared by both chart kinds.
struct Frame {
    int left = 50, top = 30, right, bottom;
    int y_of(double v) const { return bottom - static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * (bottom - top))); }
};

void draw_axes(Canvas& c, const Frame& f, const std::string& title)
{
    c.text(f.left, 10, title, kInk);
    for (int i = 0; i <= 10; ++i) {
        const double v = i / 10.0;
        const int y = f.y_of(v);
        c.line(f.left, y, f.right, y, kGrid);
        if (i % 2 == 0) c.text(f.left - 30, y - 5, fmt(v, "%.1f"), kInk);
    }
    c.line(f.left, f.top, f.left, f.bottom, kInk);
    c.line(f.left, f.bottom, f.right, f.bottom, kInk);
}

void draw_legend(Canvas& c, const Frame& f, const std::vector<std::string>& names)
{
    int x = f.right - 10;
    for (const auto& n : names) x -= Canvas::text_width(n) + 24;
    for (std::size_t s = 0; s < names.size(); ++s) {
        c.fill_rect(x, 12, x + 10, 20, kPalette[s % kPalette.size()]);
        c.text(x + 14, 10, names[s], kInk);
        x += Canvas::text_width(names[s]) + 24;
    }
}

bool parse_number(const std::string& s, double& v)
{
    if (s.empty() || s == "failed") return false;
    char* end = nullptr;
    v = std::strtod(s.c_str(), &end);
    return end && *end == '\0' && std::isfinite(v);
}

}  // namespace

Canvas::Canvas(int width, int height, Color background) : w_(width), h_(height)
{
    if (width < 1 || height < 1) throw std::invalid_argument("canvas: empty size");
    px_.resize(static_cast<std::size_t>(w_) * h_ * 3);
    for (std::size_t i = 0; i < px_.size(); i += 3) std::copy(background.begin(), background.end(), px_.begin() + i);
}

void Canvas::set(int x, int y, Color c)
{
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    std::copy(c.begin(), c.end(), px_.begin() + (static_cast<std::size_t>(y) * w_ + x) * 3);
}

Color Canvas::get(int x, int y) const
{
    const std::size_t i = (static_cast<std::size_t>(y) * w_ + x) * 3;
    return {px_.at(i), px_.at(i + 1), px_.at(i + 2)};
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, Color c)
{
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
        for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
}

void Canvas::line(int x0, int y0, int x1, int y1, Color c, int thickness)
{
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    const int r = (thickness - 1) / 2;
    for (;;) {
        fill_rect(x0 - r, y0 - r, x0 + thickness - 1 - r, y0 + thickness - 1 - r, c);
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void Canvas::text(int x, int y, const std::string& s, Color c, bool vertical)
{
    for (std::size_t i = 0; i < s.size(); ++i) {
        const unsigned char ch = static_cast<unsigned char>(s[i]);
        const auto& g = kGlyphs[(ch >= 32 && ch < 127) ? ch - 32 : '?' - 32];
        for (int row = 0; row < 11; ++row)
            for (int col = 0; col < 6; ++col) {
                if (!(g[row] >> (5 - col) & 1)) continue;
                const int o = static_cast<int>(i) * 6 + col;
                if (vertical) set(x + row, y - o, c);
                else set(x + o, y + row, c);
            }
    }
}

void Canvas::save_png(const std::string& path) const
{
    Tensor t({1, 3, h_, w_});
    const std::size_t plane = static_cast<std::size_t>(h_) * w_;
    for (std::size_t i = 0; i < plane; ++i)
        for (int ch = 0; ch < 3; ++ch) t[ch * plane + i] = image::from_level(px_[i * 3 + ch]);
    image::save_png(path, t);
}

void line_plot(const std::string& path, const std::string& title, const std::string& xlabel, const std::vector<Series>& series)
{
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& s : series) {
        if (s.x.size() != s.y.size()) throw std::invalid_argument("line_plot: x and y sizes differ");
        for (double v : s.x) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (!(lo <= hi)) throw std::invalid_argument("line_plot: no points");
    if (hi == lo) hi = lo + 1.0;
    Canvas c(480, 320);
    Frame f;
    f.right = c.width() - 20;
    f.bottom = c.height() - 45;
    draw_axes(c, f, title);
    auto x_of = [&](double v) { return f.left + static_cast<int>(std::lround((v - lo) / (hi - lo) * (f.right - f.left))); };
    std::vector<double> ticks;
    for (const auto& s : series) ticks.insert(ticks.end(), s.x.begin(), s.x.end());
    std::sort(ticks.begin(), ticks.end());
    ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
    for (double t : ticks) {
        const std::string lab = fmt(t, "%g");
        c.line(x_of(t), f.bottom, x_of(t), f.bottom + 4, kInk);
        c.text(x_of(t) - Canvas::text_width(lab) / 2, f.bottom + 7, lab, kInk);
    }
    c.text((f.left + f.right - Canvas::text_width(xlabel)) / 2, f.bottom + 24, xlabel, kInk);
    std::vector<std::string> names;
    for (std::size_t s = 0; s < series.size(); ++s) {
        const Color col = kPalette[s % kPalette.size()];
        names.push_back(series[s].name);
        for (std::size_t i = 0; i < series[s].x.size(); ++i) {
            const int x = x_of(series[s].x[i]), y = f.y_of(series[s].y[i]);
            if (i > 0) c.line(x_of(series[s].x[i - 1]), f.y_of(series[s].y[i - 1]), x, y, col, 2);
            c.fill_rect(x - 2, y - 2, x + 2, y + 2, col);
        }
    }
    draw_legend(c, f, names);
    c.save_png(path);
}

void bar_plot(const std::string& path, const std::string& title, const std::vector<std::string>& categories,
              const std::vector<std::string>& series, const std::vector<std::vector<double>>& values)
{
    if (categories.empty() || series.empty()) throw std::invalid_argument("bar_plot: nothing to draw");
    if (values.size() != series.size()) throw std::invalid_argument("bar_plot: values do not match series");
    std::size_t longest = 0;
    for (const auto& cat : categories) longest = std::max(longest, cat.size());
    const int group = std::max(24, 10 * static_cast<int>(series.size()) + 12);
    Canvas c(70 + group * static_cast<int>(categories.size()) + 20, 260 + 6 * static_cast<int>(longest));
    Frame f;
    f.right = c.width() - 20;
    f.bottom = 240;
    draw_axes(c, f, title);
    const int bw = (group - 12) / static_cast<int>(series.size());
    for (std::size_t k = 0; k < categories.size(); ++k) {
        const int gx = f.left + 6 + static_cast<int>(k) * group;
        for (std::size_t s = 0; s < series.size(); ++s) {
            if (values[s].size() != categories.size()) throw std::invalid_argument("bar_plot: ragged values");
            const double v = values[s][k];
            if (!std::isfinite(v)) continue;
            const int x0 = gx + static_cast<int>(s) * bw;
            c.fill_rect(x0, f.y_of(v), x0 + bw - 2, f.bottom - 1, kPalette[s % kPalette.size()]);
        }
        c.text(gx + group / 2 - 8, f.bottom + 6 + Canvas::text_width(categories[k]), categories[k], kInk, true);
    }
    draw_legend(c, f, series);
    c.save_png(path);
}

std::vector<std::string> render_report(const CsvTable& suite, const CsvTable* extras, const std::string& out_dir)
{
    std::filesystem::create_directories(out_dir);
    std::vector<std::string> written;
    if (suite.header.size() < 2 || suite.header[0] != "transform") throw std::runtime_error("report: not a suite CSV");
    const std::vector<std::string> methods(suite.header.begin() + 1, suite.header.end());
    std::vector<std::string> cats;
    std::vector<std::vector<double>> vals(methods.size());
    for (const auto& row : suite.rows) {
        cats.push_back(row[0]);
        for (std::size_t m = 0; m < methods.size(); ++m) {
            double v;
            vals[m].push_back(parse_number(row[m + 1], v) ? v : NAN);
        }
    }
    const std::string bar = (std::filesystem::path(out_dir) / "suite.png").string();
    bar_plot(bar, "Bit accuracy per transform", cats, methods, vals);
    written.push_back(bar);

    if (extras) {
        if (extras->header.size() < 4 || extras->header[0] != "family") throw std::runtime_error("report: not an extras CSV");
        const std::vector<std::string> em(extras->header.begin() + 3, extras->header.end());
        std::map<std::string, std::vector<Series>> families;
        std::vector<std::string> order;
        for (const auto& row : extras->rows) {
            auto& fam = families[row[0]];
            if (fam.empty()) {
                order.push_back(row[0]);
                for (const auto& m : em) fam.push_back({m, {}, {}});
            }
            double x;
            if (!parse_number(row[2], x)) throw std::runtime_error("report: bad parameter " + row[2]);
            for (std::size_t m = 0; m < em.size(); ++m) {
                double y;
                if (!parse_number(row[m + 3], y)) continue;
                fam[m].x.push_back(x);
                fam[m].y.push_back(y);
            }
        }
        for (const auto& name : order) {
            const std::string p = (std::filesystem::path(out_dir) / (name + ".png")).string();
            line_plot(p, "Bit accuracy: " + name, name == "autoencoder" ? "bottleneck level" : "strength", families[name]);
            written.push_back(p);
        }
    }
    return written;
}

}  // namespace onrw::eval
