#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace cpt {

/// Minimal standalone SVG line plots for the run reports. No dependencies,
/// fixed canvas, linear or log-10 x axis.
class SvgPlot {
public:
    SvgPlot(std::string title, std::string x_label, std::string y_label)
        : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)) {}

    void set_log_x(bool log_x) { log_x_ = log_x; }

    void add_line(const std::string& label, std::vector<std::pair<double, double>> points);
    void add_points(const std::string& label, std::vector<std::pair<double, double>> points);

    void write(const std::filesystem::path& path) const;

private:
    struct Series {
        std::string label;
        std::vector<std::pair<double, double>> points;
        bool markers_only = false;
    };

    std::string title_;
    std::string x_label_;
    std::string y_label_;
    bool log_x_ = false;
    std::vector<Series> series_;
};

}  // namespace cpt
