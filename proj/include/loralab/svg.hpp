#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

namespace loralab {

struct ChartSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
    std::string color = "#1f77b4";
    double width = 1.5;
};

// Minimal hand-rolled SVG line chart: axes, ticks, one polyline per series,
// legend. Coordinates are formatted with fixed precision so output bytes are
// deterministic.
inline std::string line_chart_svg(const std::vector<ChartSeries>& series, const std::string& title,
                                  const std::string& x_label, const std::string& y_label) {
    const double width = 640.0;
    const double height = 420.0;
    const double left = 64.0;
    const double right = width - 24.0;
    const double top = 40.0;
    const double bottom = height - 48.0;

    double x_min = 0.0, x_max = 1.0, y_min = 0.0, y_max = 1.0;
    bool first = true;
    for (const auto& s : series)
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            if (first) {
                x_min = x_max = x;
                y_min = y_max = y;
                first = false;
            } else {
                x_min = std::min(x_min, x);
                x_max = std::max(x_max, x);
                y_min = std::min(y_min, y);
                y_max = std::max(y_max, y);
            }
        }
    if (x_max <= x_min) x_max = x_min + 1.0;
    if (y_max <= y_min) y_max = y_min + 1.0;
    const double y_pad = 0.05 * (y_max - y_min);
    y_min -= y_pad;
    y_max += y_pad;

    auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * (right - left); };
    auto py = [&](double y) { return bottom - (y - y_min) / (y_max - y_min) * (bottom - top); };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        return std::string(buf);
    };
    auto tick_label = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.3g", v);
        return std::string(buf);
    };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" +
           num(height) + "\" viewBox=\"0 0 " + num(width) + " " + num(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + num(width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
           title + "</text>\n";
    svg += "<line x1=\"" + num(left) + "\" y1=\"" + num(bottom) + "\" x2=\"" + num(right) +
           "\" y2=\"" + num(bottom) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + num(left) + "\" y1=\"" + num(top) + "\" x2=\"" + num(left) +
           "\" y2=\"" + num(bottom) + "\" stroke=\"black\"/>\n";

    const int ticks = 5;
    for (int t = 0; t <= ticks; ++t) {
        const double fx = x_min + (x_max - x_min) * t / ticks;
        const double fy = y_min + (y_max - y_min) * t / ticks;
        svg += "<line x1=\"" + num(px(fx)) + "\" y1=\"" + num(bottom) + "\" x2=\"" + num(px(fx)) +
               "\" y2=\"" + num(bottom + 5) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + num(px(fx)) + "\" y=\"" + num(bottom + 18) +
               "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" +
               tick_label(fx) + "</text>\n";
        svg += "<line x1=\"" + num(left - 5) + "\" y1=\"" + num(py(fy)) + "\" x2=\"" + num(left) +
               "\" y2=\"" + num(py(fy)) + "\" stroke=\"black\"/>\n";
        svg += "<text x=\"" + num(left - 8) + "\" y=\"" + num(py(fy) + 4) +
               "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" +
               tick_label(fy) + "</text>\n";
    }
    svg += "<text x=\"" + num((left + right) / 2) + "\" y=\"" + num(height - 10) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + x_label +
           "</text>\n";
    svg += "<text x=\"16\" y=\"" + num((top + bottom) / 2) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 " +
           num((top + bottom) / 2) + ")\">" + y_label + "</text>\n";

    for (const auto& s : series) {
        std::string points;
        for (const auto& [x, y] : s.points) {
            if (!std::isfinite(x) || !std::isfinite(y)) continue;
            if (!points.empty()) points += ' ';
            points += num(px(x)) + ',' + num(py(y));
        }
        svg += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"" +
               num(s.width) + "\" points=\"" + points + "\"/>\n";
    }

    double legend_y = top + 6.0;
    for (const auto& s : series) {
        svg += "<line x1=\"" + num(right - 120) + "\" y1=\"" + num(legend_y) + "\" x2=\"" +
               num(right - 96) + "\" y2=\"" + num(legend_y) + "\" stroke=\"" + s.color +
               "\" stroke-width=\"" + num(s.width) + "\"/>\n";
        svg += "<text x=\"" + num(right - 90) + "\" y=\"" + num(legend_y + 4) +
               "\" font-family=\"sans-serif\" font-size=\"11\">" + s.name + "</text>\n";
        legend_y += 16.0;
    }
    svg += "</svg>\n";
    return svg;
}

inline std::string sweep_color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    return palette[i % (sizeof(palette) / sizeof(palette[0]))];
}

}  // namespace loralab
