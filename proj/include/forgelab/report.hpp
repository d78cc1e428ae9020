#pragma once

#include <string>
#include <vector>

#include "forgelab/common.hpp"

namespace forgelab::report {

// One experiment measurement; the row schema every sweep CSV shares.
struct SweepRow {
    double axis = 0.0;      // swept value (n, b, T, subset size, ...)
    uint64_t trial = 0;
    double error = 0.0;     // achieved forging error, l2
    double baseline = 0.0;  // unselected-control error for the same step
    double runtime_s = 0.0;
};

// Header: axis,trial,error,baseline,runtime_s (axis renamed per sweep).
void write_sweep_csv(const std::string& path, const std::string& axis_name,
                     const std::vector<SweepRow>& rows);
std::string render_sweep_csv(const std::string& axis_name,
                             const std::vector<SweepRow>& rows);

struct Series {
    std::string label;
    std::vector<std::pair<double, double>> points;  // (x, y)
    std::string color = "#1f6fb2";
    bool draw_line = true;
    bool draw_points = true;
};

struct ChartSpec {
    std::string title;
    std::string x_label;
    std::string y_label;
    bool log_x = false;
    bool log_y = true;  // errors span decades
    int width = 720;
    int height = 480;
};

// Self-contained SVG (no external refs): axes, decade/linear ticks,
// polylines, point markers, legend.
std::string render_svg_chart(const ChartSpec& spec, const std::vector<Series>& series);
void write_svg_chart(const std::string& path, const ChartSpec& spec,
                     const std::vector<Series>& series);

}  // namespace forgelab::report
