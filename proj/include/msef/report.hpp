#pragma once

#include <string>
#include <vector>

#include "msef/stats.hpp"

namespace msef::report {

// Deterministic, dependency-free SVG renderers (fixed-precision coordinates).

std::string histogram_svg(const std::vector<double>& xs, int bins, const std::string& title);

std::string scatter_svg(const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& fit_coeffs, const std::string& title,
                        const std::string& xlabel, const std::string& ylabel);

std::string bland_altman_svg(const std::vector<double>& model, const std::vector<double>& human,
                             const stats::BlandAltmanResult& ba, const std::string& title);

std::string heatmap_svg(const stats::CorrMatrix& corr, const std::string& title);

}  // namespace msef::report
