#include "msef/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "msef/errors.hpp"

namespace msef::report {

namespace {

constexpr int kW = 640, kH = 420;
constexpr int kMargin = 56;

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

struct Frame {
    double xlo, xhi, ylo, yhi;

    double px(double x) const { return kMargin + (x - xlo) / (xhi - xlo) * (kW - 2 * kMargin); }
    double py(double y) const { return kH - kMargin - (y - ylo) / (yhi - ylo) * (kH - 2 * kMargin); }
};

void open_svg(std::ostringstream& s, const std::string& title) {
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n";
    s << "<rect width=\"" << kW << "\" height=\"" << kH << "\" fill=\"white\"/>\n";
    s << "<text x=\"" << kW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" font-family=\"sans-serif\">"
      << title << "</text>\n";
}

void axes(std::ostringstream& s, const Frame& f, const std::string& xlabel, const std::string& ylabel) {
    s << "<line x1=\"" << kMargin << "\" y1=\"" << kH - kMargin << "\" x2=\"" << kW - kMargin << "\" y2=\""
      << kH - kMargin << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << kMargin << "\" y1=\"" << kMargin << "\" x2=\"" << kMargin << "\" y2=\"" << kH - kMargin
      << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double x = f.xlo + (f.xhi - f.xlo) * i / 4.0;
        const double y = f.ylo + (f.yhi - f.ylo) * i / 4.0;
        s << "<text x=\"" << num(f.px(x)) << "\" y=\"" << kH - kMargin + 18
          << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">" << num(x) << "</text>\n";
        s << "<text x=\"" << kMargin - 8 << "\" y=\"" << num(f.py(y) + 4)
          << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">" << num(y) << "</text>\n";
    }
    s << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12
      << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << xlabel << "</text>\n";
    s << "<text x=\"16\" y=\"" << kH / 2
      << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\" transform=\"rotate(-90 16 "
      << kH / 2 << ")\">" << ylabel << "</text>\n";
}

}  // namespace

std::string histogram_svg(const std::vector<double>& xs, int bins, const std::string& title) {
    if (xs.empty() || bins < 1) throw InputError("histogram_svg: empty input");
    const auto [mn_it, mx_it] = std::minmax_element(xs.begin(), xs.end());
    double lo = *mn_it, hi = *mx_it;
    if (hi <= lo) hi = lo + 1.0;
    std::vector<long> counts(static_cast<size_t>(bins), 0);
    for (double v : xs) {
        int b = static_cast<int>((v - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        ++counts[static_cast<size_t>(b)];
    }
    const long peak = *std::max_element(counts.begin(), counts.end());
    Frame f{lo, hi, 0.0, static_cast<double>(peak)};
    std::ostringstream s;
    open_svg(s, title);
    axes(s, f, "value", "count");
    for (int b = 0; b < bins; ++b) {
        const double x0 = lo + (hi - lo) * b / bins;
        const double x1 = lo + (hi - lo) * (b + 1) / bins;
        const double y = static_cast<double>(counts[static_cast<size_t>(b)]);
        s << "<rect x=\"" << num(f.px(x0)) << "\" y=\"" << num(f.py(y)) << "\" width=\""
          << num(f.px(x1) - f.px(x0) - 1.0) << "\" height=\"" << num(f.py(0) - f.py(y))
          << "\" fill=\"#4878a8\"/>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::string scatter_svg(const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& fit_coeffs, const std::string& title,
                        const std::string& xlabel, const std::string& ylabel) {
    if (x.empty() || x.size() != y.size()) throw InputError("scatter_svg: bad input");
    const auto [xlo_it, xhi_it] = std::minmax_element(x.begin(), x.end());
    const auto [ylo_it, yhi_it] = std::minmax_element(y.begin(), y.end());
    Frame f{*xlo_it, std::max(*xhi_it, *xlo_it + 1e-9), *ylo_it, std::max(*yhi_it, *ylo_it + 1e-9)};
    std::ostringstream s;
    open_svg(s, title);
    axes(s, f, xlabel, ylabel);
    const size_t step = std::max<size_t>(1, x.size() / 2000);  // cap point count
    for (size_t i = 0; i < x.size(); i += step)
        s << "<circle cx=\"" << num(f.px(x[i])) << "\" cy=\"" << num(f.py(y[i]))
          << "\" r=\"1.6\" fill=\"#40608a\" fill-opacity=\"0.45\"/>\n";
    if (!fit_coeffs.empty()) {
        s << "<polyline fill=\"none\" stroke=\"#c03028\" stroke-width=\"2\" points=\"";
        for (int i = 0; i <= 100; ++i) {
            const double xv = f.xlo + (f.xhi - f.xlo) * i / 100.0;
            double yv = 0, p = 1;
            for (double c : fit_coeffs) {
                yv += c * p;
                p *= xv;
            }
            yv = std::clamp(yv, f.ylo, f.yhi);
            s << num(f.px(xv)) << ',' << num(f.py(yv)) << ' ';
        }
        s << "\"/>\n";
    }
    s << "</svg>\n";
    return s.str();
}

std::string bland_altman_svg(const std::vector<double>& model, const std::vector<double>& human,
                             const stats::BlandAltmanResult& ba, const std::string& title) {
    if (model.size() != human.size() || model.empty()) throw InputError("bland_altman_svg: bad input");
    std::vector<double> mean(model.size()), diff(model.size());
    for (size_t i = 0; i < model.size(); ++i) {
        mean[i] = 0.5 * (model[i] + human[i]);
        diff[i] = model[i] - human[i];
    }
    const auto [xlo_it, xhi_it] = std::minmax_element(mean.begin(), mean.end());
    double dlo = std::min(ba.loa_lower, *std::min_element(diff.begin(), diff.end()));
    double dhi = std::max(ba.loa_upper, *std::max_element(diff.begin(), diff.end()));
    if (dhi <= dlo) dhi = dlo + 1e-9;
    Frame f{*xlo_it, std::max(*xhi_it, *xlo_it + 1e-9), dlo, dhi};
    std::ostringstream s;
    open_svg(s, title);
    axes(s, f, "mean of model and human", "model - human");
    for (double yline : {ba.bias, ba.loa_lower, ba.loa_upper})
        s << "<line x1=\"" << kMargin << "\" y1=\"" << num(f.py(yline)) << "\" x2=\"" << kW - kMargin
          << "\" y2=\"" << num(f.py(yline)) << "\" stroke=\"#c03028\" stroke-dasharray=\"6,3\"/>\n";
    const size_t step = std::max<size_t>(1, mean.size() / 2000);
    for (size_t i = 0; i < mean.size(); i += step)
        s << "<circle cx=\"" << num(f.px(mean[i])) << "\" cy=\"" << num(f.py(diff[i]))
          << "\" r=\"1.8\" fill=\"#40608a\" fill-opacity=\"0.5\"/>\n";
    s << "</svg>\n";
    return s.str();
}

std::string heatmap_svg(const stats::CorrMatrix& corr, const std::string& title) {
    const int k = static_cast<int>(corr.names.size());
    if (k == 0) throw InputError("heatmap_svg: empty matrix");
    const int cell = std::max(18, 300 / k);
    const int left = 170, top = 60;
    const int w = left + k * cell + 40, h = top + k * cell + 40;
    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    s << "<rect width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    s << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\" font-family=\"sans-serif\">"
      << title << "</text>\n";
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const double v = corr.m[static_cast<size_t>(i)][static_cast<size_t>(j)];
            // blue (-1) .. white (0) .. red (+1)
            const int r = static_cast<int>(std::round(255 * std::min(1.0, 1.0 + std::min(v, 0.0))));
            const int b = static_cast<int>(std::round(255 * std::min(1.0, 1.0 - std::max(v, 0.0))));
            const int g = std::min(r, b);
            s << "<rect x=\"" << left + j * cell << "\" y=\"" << top + i * cell << "\" width=\"" << cell
              << "\" height=\"" << cell << "\" fill=\"rgb(" << r << ',' << g << ',' << b << ")\"/>\n";
            if (cell >= 24)
                s << "<text x=\"" << left + j * cell + cell / 2 << "\" y=\"" << top + i * cell + cell / 2 + 4
                  << "\" text-anchor=\"middle\" font-size=\"9\" font-family=\"sans-serif\">" << num(v)
                  << "</text>\n";
        }
        s << "<text x=\"" << left - 6 << "\" y=\"" << top + i * cell + cell / 2 + 4
          << "\" text-anchor=\"end\" font-size=\"10\" font-family=\"sans-serif\">" << corr.names[static_cast<size_t>(i)]
          << "</text>\n";
        s << "<text x=\"" << left + i * cell + cell / 2 << "\" y=\"" << top + k * cell + 14
          << "\" text-anchor=\"middle\" font-size=\"9\" font-family=\"sans-serif\">" << i << "</text>\n";
    }
    s << "</svg>\n";
    return s.str();
}

}  // namespace msef::report
