#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mate/errors.hpp"

namespace mate {

/// Dense row-major matrix of doubles. Deliberately minimal: the library
/// only needs matvec-style products and elementwise accumulation, all
/// written as explicit loops where they are used.
struct matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    matrix() = default;
    matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {}

    double& operator()(int r, int c) {
        return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
    }
    double operator()(int r, int c) const {
        return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
    }

    bool same_shape(const matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }

    bool operator==(const matrix& other) const {
        return rows == other.rows && cols == other.cols && data == other.data;
    }
};

/// y = A x
inline std::vector<double> matvec(const matrix& a, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != a.cols)
        throw numeric_error("matvec: dimension mismatch");
    std::vector<double> y(static_cast<std::size_t>(a.rows), 0.0);
    for (int r = 0; r < a.rows; ++r) {
        double acc = 0.0;
        for (int c = 0; c < a.cols; ++c) acc += a(r, c) * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = acc;
    }
    return y;
}

/// y = A^T x
inline std::vector<double> matvec_transposed(const matrix& a, const std::vector<double>& x) {
    if (static_cast<int>(x.size()) != a.rows)
        throw numeric_error("matvec_transposed: dimension mismatch");
    std::vector<double> y(static_cast<std::size_t>(a.cols), 0.0);
    for (int r = 0; r < a.rows; ++r) {
        double xr = x[static_cast<std::size_t>(r)];
        for (int c = 0; c < a.cols; ++c) y[static_cast<std::size_t>(c)] += a(r, c) * xr;
    }
    return y;
}

/// A += scale * u v^T
inline void add_outer(matrix& a, const std::vector<double>& u, const std::vector<double>& v, double scale = 1.0) {
    for (int r = 0; r < a.rows; ++r)
        for (int c = 0; c < a.cols; ++c)
            a(r, c) += scale * u[static_cast<std::size_t>(r)] * v[static_cast<std::size_t>(c)];
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline bool all_finite(const matrix& m) { return all_finite(m.data); }

} // namespace mate
