// Deterministic file output: 17-significant-digit decimal formatting, atomic
// writes (temp + rename), CSV emitters for the project's file contracts, and
// minimal hand-written SVG plots.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace spqr {

// Shortest-faithful decimal with up to 17 significant digits ("%.17g").
std::string format_g17(double v);

// Writes content to path via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

struct CsvColumn {
    std::string name;
    Eigen::VectorXd values;
};

// Comma-separated, "\n" line endings, one header row.
std::string csv_table(const std::vector<CsvColumn>& columns);

// Polyline plot of y(x) pairs; multiple series supported.
struct SvgSeries {
    Eigen::VectorXd x;
    Eigen::VectorXd y;
    std::string color = "#1f77b4";
};

std::string svg_line_plot(const std::vector<SvgSeries>& series, const std::string& title);

// Histogram bars plus an overlay curve (used for spectral density plots).
std::string svg_histogram_with_curve(const Eigen::VectorXd& bin_left,
                                     const Eigen::VectorXd& bin_right,
                                     const Eigen::VectorXd& bar_height,
                                     const Eigen::VectorXd& curve_x,
                                     const Eigen::VectorXd& curve_y,
                                     const std::string& title);

} // namespace spqr
