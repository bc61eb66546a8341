#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "msef/errors.hpp"
#include "msef/rng.hpp"

namespace msef {

// Dense row-major matrix of doubles. Everything in the model is rank-2
// (vectors are 1 x d); grad, when allocated, mirrors data element for element.
struct Tensor {
    std::vector<int> shape;      // {rows, cols}
    std::vector<double> data;    // row-major, size rows*cols
    bool requires_grad = false;
    std::vector<double> grad;    // empty until backward allocates it

    Tensor() = default;
    Tensor(int rows, int cols, double fill = 0.0)
        : shape{rows, cols}, data(static_cast<size_t>(rows) * cols, fill) {
        if (rows <= 0 || cols <= 0) throw ShapeError("Tensor: extents must be positive");
    }

    static Tensor zeros(int rows, int cols) { return Tensor(rows, cols, 0.0); }

    static Tensor from_rows(const std::vector<std::vector<double>>& rows) {
        if (rows.empty() || rows[0].empty()) throw ShapeError("from_rows: empty");
        Tensor t(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
        for (size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != rows[0].size()) throw ShapeError("from_rows: ragged rows");
            for (size_t j = 0; j < rows[i].size(); ++j) t.at(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
        }
        return t;
    }

    static Tensor randn(int rows, int cols, CounterRng& rng, double sd = 1.0) {
        Tensor t(rows, cols);
        for (auto& v : t.data) v = sd * rng.gaussian();
        return t;
    }

    int rows() const { return shape[0]; }
    int cols() const { return shape[1]; }
    size_t numel() const { return data.size(); }

    double& at(int i, int j) { return data[static_cast<size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return data[static_cast<size_t>(i) * cols() + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool is_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void check_finite(const char* where) const {
        if (!is_finite()) throw NumericError(std::string(where) + ": non-finite value");
    }

    uint64_t content_hash() const {
        uint64_t h = fnv1a(shape.data(), shape.size() * sizeof(int));
        return fnv1a(data.data(), data.size() * sizeof(double), h);
    }
};

}  // namespace msef
