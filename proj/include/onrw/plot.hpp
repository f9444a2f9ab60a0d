#pragma once

// Minimal PNG chart rendering for benchmark reports.

#include "onrw/bench.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace onrw::eval {

class Canvas {
public:
    Canvas(int width, int height, std::array<std::uint8_t, 3> background = {255, 255, 255});

    int width() const { return w_; }
    int height() const { return h_; }
    void set(int x, int y, std::array<std::uint8_t, 3> c);
    std::array<std::uint8_t, 3> get(int x, int y) const;
    void fill_rect(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c);
    void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c, int thickness = 1);
    /// 6x11 glyphs; `vertical` runs the text bottom to top starting at (x, y).
    void text(int x, int y, const std::string& s, std::array<std::uint8_t, 3> c, bool vertical = false);
    static int text_width(const std::string& s) { return 6 * static_cast<int>(s.size()); }
    void save_png(const std::string& path) const;

private:
    int w_, h_;
    std::vector<std::uint8_t> px_;
};

struct Series {
    std::string name;
    std::vector<double> x, y;
};

/// Accuracy-style line chart with the y axis fixed to [0,1].
void line_plot(const std::string& path, const std::string& title, const std::string& xlabel, const std::vector<Series>& series);
/// Grouped bars, values[s][c] for series s and category c, y axis [0,1].
void bar_plot(const std::string& path, const std::string& title, const std::vector<std::string>& categories,
              const std::vector<std::string>& series, const std::vector<std::vector<double>>& values);

/// Writes the suite bar chart plus one line chart per extra attack family
/// into `out_dir`; returns the written paths. Failed cells are skipped.
std::vector<std::string> render_report(const CsvTable& suite, const CsvTable* extras, const std::string& out_dir);

}  // namespace onrw::eval
