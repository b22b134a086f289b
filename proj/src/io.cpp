#include "spqr/io.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace spqr {

std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out)
            throw std::runtime_error("write_file_atomic: cannot open " + tmp.string());
        out << content;
        if (!out)
            throw std::runtime_error("write_file_atomic: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string csv_table(const std::vector<CsvColumn>& columns) {
    if (columns.empty())
        return "";
    std::ostringstream out;
    for (std::size_t c = 0; c < columns.size(); ++c)
        out << (c ? "," : "") << columns[c].name;
    out << "\n";
    const Eigen::Index rows = columns.front().values.size();
    for (const CsvColumn& col : columns)
        if (col.values.size() != rows)
            throw std::invalid_argument("csv_table: ragged columns");
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < columns.size(); ++c)
            out << (c ? "," : "") << format_g17(columns[c].values[r]);
        out << "\n";
    }
    return out.str();
}

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 480.0;
constexpr double kMargin = 48.0;

struct Range {
    double lo, hi;
    double map(double v, double a, double b) const {
        if (hi <= lo)
            return 0.5 * (a + b);
        return a + (v - lo) / (hi - lo) * (b - a);
    }
};

void expand(Range& r, const Eigen::VectorXd& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        r.lo = std::min(r.lo, v[i]);
        r.hi = std::max(r.hi, v[i]);
    }
}

std::string svg_header(const std::string& title) {
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << kWidth / 2 << "\" y=\"20\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n";
    out << "<line x1=\"" << kMargin << "\" y1=\"" << kHeight - kMargin << "\" x2=\""
        << kWidth - kMargin << "\" y2=\"" << kHeight - kMargin
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    out << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin
        << "\" y2=\"" << kHeight - kMargin << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    return out.str();
}

} // namespace

std::string svg_line_plot(const std::vector<SvgSeries>& series, const std::string& title) {
    Range xr{1e300, -1e300}, yr{1e300, -1e300};
    for (const SvgSeries& s : series) {
        expand(xr, s.x);
        expand(yr, s.y);
    }
    std::ostringstream out;
    out << svg_header(title);
    for (const SvgSeries& s : series) {
        out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
        for (Eigen::Index i = 0; i < s.x.size(); ++i) {
            out << xr.map(s.x[i], kMargin, kWidth - kMargin) << ","
                << yr.map(s.y[i], kHeight - kMargin, kMargin) << " ";
        }
        out << "\"/>\n";
    }
    out << "</svg>\n";
    return out.str();
}

std::string svg_histogram_with_curve(const Eigen::VectorXd& bin_left,
                                     const Eigen::VectorXd& bin_right,
                                     const Eigen::VectorXd& bar_height,
                                     const Eigen::VectorXd& curve_x,
                                     const Eigen::VectorXd& curve_y,
                                     const std::string& title) {
    Range xr{1e300, -1e300}, yr{0.0, 0.0};
    expand(xr, bin_left);
    expand(xr, bin_right);
    expand(xr, curve_x);
    expand(yr, bar_height);
    expand(yr, curve_y);
    std::ostringstream out;
    out << svg_header(title);
    for (Eigen::Index i = 0; i < bar_height.size(); ++i) {
        const double x0 = xr.map(bin_left[i], kMargin, kWidth - kMargin);
        const double x1 = xr.map(bin_right[i], kMargin, kWidth - kMargin);
        const double y1 = yr.map(bar_height[i], kHeight - kMargin, kMargin);
        out << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0
            << "\" height=\"" << (kHeight - kMargin) - y1
            << "\" fill=\"#9ecae1\" stroke=\"#3182bd\" stroke-width=\"0.5\"/>\n";
    }
    out << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"";
    for (Eigen::Index i = 0; i < curve_x.size(); ++i) {
        out << xr.map(curve_x[i], kMargin, kWidth - kMargin) << ","
            << yr.map(curve_y[i], kHeight - kMargin, kMargin) << " ";
    }
    out << "\"/>\n</svg>\n";
    return out.str();
}

} // namespace spqr
