#include "forgelab/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace forgelab::report {

namespace {

std::string fmt2(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

std::string xml_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

struct AxisScale {
    bool log = false;
    double lo = 0.0, hi = 1.0;  // data range (log10 values when log)
    double px0 = 0.0, px1 = 1.0;

    double to_px(double v) const {
        double t = log ? std::log10(std::max(v, 1e-300)) : v;
        const double span = hi - lo;
        const double f = span == 0.0 ? 0.5 : (t - lo) / span;
        return px0 + f * (px1 - px0);
    }
};

// Tick positions: powers of ten in range when log, ~6 round steps otherwise.
std::vector<double> ticks_for(const AxisScale& s) {
    std::vector<double> out;
    if (s.log) {
        for (int e = int(std::floor(s.lo)); e <= int(std::ceil(s.hi)); ++e)
            out.push_back(std::pow(10.0, e));
        return out;
    }
    const double span = s.hi - s.lo;
    if (span <= 0.0) return {s.lo};
    const double raw = span / 6.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0})
        if (mag * m >= raw) { step = mag * m; break; }
    for (double v = std::ceil(s.lo / step) * step; v <= s.hi + step * 1e-9; v += step)
        out.push_back(v);
    return out;
}

}  // namespace

std::string render_sweep_csv(const std::string& axis_name,
                             const std::vector<SweepRow>& rows) {
    std::ostringstream os;
    os << axis_name << ",trial,error,baseline,runtime_s\n";
    os.precision(12);
    for (const SweepRow& r : rows)
        os << r.axis << "," << r.trial << "," << r.error << "," << r.baseline << ","
           << r.runtime_s << "\n";
    return os.str();
}

void write_sweep_csv(const std::string& path, const std::string& axis_name,
                     const std::vector<SweepRow>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open csv for writing: " + path);
    out << render_sweep_csv(axis_name, rows);
    if (!out) throw IoError("csv write failed: " + path);
}

std::string render_svg_chart(const ChartSpec& spec, const std::vector<Series>& series) {
    const double ml = 70, mr = 20, mt = 40, mb = 55;  // margins
    AxisScale xs, ys;
    xs.log = spec.log_x;
    ys.log = spec.log_y;
    xs.px0 = ml;
    xs.px1 = spec.width - mr;
    ys.px0 = spec.height - mb;  // y grows downward in SVG
    ys.px1 = mt;

    double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo;
    double ylo = xlo, yhi = -xlo;
    for (const Series& s : series)
        for (const auto& [x, y] : s.points) {
            const double tx = xs.log ? std::log10(std::max(x, 1e-300)) : x;
            const double ty = ys.log ? std::log10(std::max(y, 1e-300)) : y;
            xlo = std::min(xlo, tx);
            xhi = std::max(xhi, tx);
            ylo = std::min(ylo, ty);
            yhi = std::max(yhi, ty);
        }
    if (!(xlo <= xhi)) { xlo = 0; xhi = 1; ylo = 0; yhi = 1; }
    const double xpad = (xhi - xlo) * 0.05 + 1e-12;
    const double ypad = (yhi - ylo) * 0.08 + 1e-12;
    xs.lo = xlo - xpad;
    xs.hi = xhi + xpad;
    ys.lo = ylo - ypad;
    ys.hi = yhi + ypad;

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << spec.width
       << "\" height=\"" << spec.height << "\" viewBox=\"0 0 " << spec.width << " "
       << spec.height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << spec.width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
          "font-family=\"sans-serif\" font-size=\"15\">"
       << xml_escape(spec.title) << "</text>\n";

    // Frame.
    os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\""
       << spec.width - ml - mr << "\" height=\"" << spec.height - mt - mb
       << "\" fill=\"none\" stroke=\"#333\"/>\n";

    // Ticks and grid.
    for (double v : ticks_for(xs)) {
        const double px = xs.to_px(v);
        if (px < ml - 1e-6 || px > spec.width - mr + 1e-6) continue;
        os << "<line x1=\"" << fmt2(px) << "\" y1=\"" << mt << "\" x2=\"" << fmt2(px)
           << "\" y2=\"" << spec.height - mb << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << fmt2(px) << "\" y=\"" << spec.height - mb + 18
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
              "font-size=\"11\">"
           << fmt2(v) << "</text>\n";
    }
    for (double v : ticks_for(ys)) {
        const double py = ys.to_px(v);
        if (py < mt - 1e-6 || py > spec.height - mb + 1e-6) continue;
        os << "<line x1=\"" << ml << "\" y1=\"" << fmt2(py) << "\" x2=\""
           << spec.width - mr << "\" y2=\"" << fmt2(py) << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << ml - 6 << "\" y=\"" << fmt2(py + 4)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
           << (ys.log ? ("1e" + std::to_string(int(std::round(std::log10(v)))))
                      : fmt2(v))
           << "</text>\n";
    }

    // Axis labels.
    os << "<text x=\"" << spec.width / 2 << "\" y=\"" << spec.height - 12
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
       << xml_escape(spec.x_label) << "</text>\n";
    os << "<text x=\"18\" y=\"" << spec.height / 2
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
          "transform=\"rotate(-90 18 "
       << spec.height / 2 << ")\">" << xml_escape(spec.y_label) << "</text>\n";

    // Data.
    for (const Series& s : series) {
        if (s.draw_line && s.points.size() > 1) {
            os << "<polyline fill=\"none\" stroke=\"" << s.color
               << "\" stroke-width=\"1.8\" points=\"";
            for (const auto& [x, y] : s.points)
                os << fmt2(xs.to_px(x)) << "," << fmt2(ys.to_px(y)) << " ";
            os << "\"/>\n";
        }
        if (s.draw_points)
            for (const auto& [x, y] : s.points)
                os << "<circle cx=\"" << fmt2(xs.to_px(x)) << "\" cy=\""
                   << fmt2(ys.to_px(y)) << "\" r=\"3\" fill=\"" << s.color << "\"/>\n";
    }

    // Legend.
    double ly = mt + 14;
    for (const Series& s : series) {
        os << "<rect x=\"" << spec.width - mr - 150 << "\" y=\"" << fmt2(ly - 9)
           << "\" width=\"12\" height=\"12\" fill=\"" << s.color << "\"/>\n";
        os << "<text x=\"" << spec.width - mr - 132 << "\" y=\"" << fmt2(ly + 1)
           << "\" font-family=\"sans-serif\" font-size=\"12\">"
           << xml_escape(s.label) << "</text>\n";
        ly += 18;
    }

    os << "</svg>\n";
    return os.str();
}

void write_svg_chart(const std::string& path, const ChartSpec& spec,
                     const std::vector<Series>& series) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open svg for writing: " + path);
    out << render_svg_chart(spec, series);
    if (!out) throw IoError("svg write failed: " + path);
}

}  // namespace forgelab::report
