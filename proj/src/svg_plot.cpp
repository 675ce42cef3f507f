#include "cpt/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace cpt {

namespace {

constexpr double kWidth = 760;
constexpr double kHeight = 480;
constexpr double kMarginLeft = 78;
constexpr double kMarginRight = 180;
constexpr double kMarginTop = 46;
constexpr double kMarginBottom = 58;

const char* kPalette[] = {"#c0392b", "#2980b9", "#27ae60", "#8e44ad",
                          "#d35400", "#16a085", "#2c3e50", "#7f8c8d"};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

}  // namespace

void SvgPlot::add_line(const std::string& label, std::vector<std::pair<double, double>> points) {
    series_.push_back({label, std::move(points), false});
}

void SvgPlot::add_points(const std::string& label, std::vector<std::pair<double, double>> points) {
    series_.push_back({label, std::move(points), true});
}

void SvgPlot::write(const std::filesystem::path& path) const {
    double x_min = std::numeric_limits<double>::infinity();
    double x_max = -x_min;
    double y_min = x_min;
    double y_max = -x_min;
    for (const Series& s : series_) {
        for (auto [x, y] : s.points) {
            const double xv = log_x_ ? std::log10(x) : x;
            x_min = std::min(x_min, xv);
            x_max = std::max(x_max, xv);
            y_min = std::min(y_min, y);
            y_max = std::max(y_max, y);
        }
    }
    if (!(x_min <= x_max)) {
        x_min = 0;
        x_max = 1;
        y_min = 0;
        y_max = 1;
    }
    if (x_max == x_min) {
        x_max = x_min + 1;
    }
    if (y_max == y_min) {
        y_max = y_min + 1;
    }
    const double y_pad = 0.06 * (y_max - y_min);
    y_min -= y_pad;
    y_max += y_pad;

    const double plot_w = kWidth - kMarginLeft - kMarginRight;
    const double plot_h = kHeight - kMarginTop - kMarginBottom;
    auto sx = [&](double x) {
        const double xv = log_x_ ? std::log10(x) : x;
        return kMarginLeft + (xv - x_min) / (x_max - x_min) * plot_w;
    };
    auto sy = [&](double y) {
        return kMarginTop + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;
    };

    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write plot " + path.string());
    }
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"16\">" << title_ << "</text>\n";

    // Axes box and ticks.
    out << "<rect x=\"" << kMarginLeft << "\" y=\"" << kMarginTop << "\" width=\"" << plot_w
        << "\" height=\"" << plot_h << "\" fill=\"none\" stroke=\"#333\"/>\n";
    constexpr int kTicks = 5;
    for (int i = 0; i <= kTicks; ++i) {
        const double t = static_cast<double>(i) / kTicks;
        const double xv = x_min + t * (x_max - x_min);
        const double yv = y_min + t * (y_max - y_min);
        const double px = kMarginLeft + t * plot_w;
        const double py = kMarginTop + (1.0 - t) * plot_h;
        out << "<line x1=\"" << px << "\" y1=\"" << kMarginTop + plot_h << "\" x2=\"" << px
            << "\" y2=\"" << kMarginTop + plot_h + 5 << "\" stroke=\"#333\"/>\n";
        out << "<text x=\"" << px << "\" y=\"" << kMarginTop + plot_h + 20
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << (log_x_ ? "1e" + fmt(xv) : fmt(xv)) << "</text>\n";
        out << "<line x1=\"" << kMarginLeft - 5 << "\" y1=\"" << py << "\" x2=\"" << kMarginLeft
            << "\" y2=\"" << py << "\" stroke=\"#333\"/>\n";
        out << "<text x=\"" << kMarginLeft - 8 << "\" y=\"" << py + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(yv)
            << "</text>\n";
    }
    out << "<text x=\"" << kMarginLeft + plot_w / 2 << "\" y=\"" << kHeight - 14
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">" << x_label_
        << "</text>\n";
    out << "<text x=\"20\" y=\"" << kMarginTop + plot_h / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
        << "transform=\"rotate(-90 20 " << kMarginTop + plot_h / 2 << ")\">" << y_label_
        << "</text>\n";

    // Series.
    for (std::size_t s = 0; s < series_.size(); ++s) {
        const Series& sr = series_[s];
        const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
        if (!sr.markers_only && sr.points.size() > 1) {
            out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.6\" points=\"";
            for (auto [x, y] : sr.points) {
                out << sx(x) << "," << sy(y) << " ";
            }
            out << "\"/>\n";
        }
        if (sr.markers_only) {
            for (auto [x, y] : sr.points) {
                out << "<circle cx=\"" << sx(x) << "\" cy=\"" << sy(y) << "\" r=\"3.2\" fill=\""
                    << color << "\"/>\n";
            }
        }
        // Legend.
        const double ly = kMarginTop + 16 + 18 * static_cast<double>(s);
        const double lx = kWidth - kMarginRight + 12;
        out << "<line x1=\"" << lx << "\" y1=\"" << ly - 4 << "\" x2=\"" << lx + 22 << "\" y2=\""
            << ly - 4 << "\" stroke=\"" << color << "\" stroke-width=\"3\"/>\n";
        out << "<text x=\"" << lx + 28 << "\" y=\"" << ly
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << sr.label << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace cpt
