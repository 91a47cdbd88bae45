#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace treedual {

using Vector = std::vector<double>;

inline double dot(const Vector& a, const Vector& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline void axpy(double alpha, const Vector& x, Vector& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double norm2(const Vector& a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(const Vector& a) {
    double m = 0.0;
    for (double v : a) m = std::max(m, std::fabs(v));
    return m;
}

/// Row-major dense matrix, just large enough for the small KKT and tableau
/// systems that show up in the solvers.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }

private:
    std::size_t rows_ = 0, cols_ = 0;
    Vector data_;
};

/// Solves A x = b by Gaussian elimination with partial pivoting.
/// Returns false when A is (numerically) singular; A and b are clobbered.
inline bool solve_inplace(Matrix& a, Vector& b, double pivot_tol = 1e-13) {
    const std::size_t n = a.rows();
    if (a.cols() != n || b.size() != n) throw std::invalid_argument("solve_inplace: shape mismatch");
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;

    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        double best = std::fabs(a(perm[k], k));
        for (std::size_t i = k + 1; i < n; ++i) {
            double v = std::fabs(a(perm[i], k));
            if (v > best) { best = v; piv = i; }
        }
        if (best < pivot_tol) return false;
        std::swap(perm[k], perm[piv]);
        const std::size_t rk = perm[k];
        for (std::size_t i = k + 1; i < n; ++i) {
            const std::size_t ri = perm[i];
            const double f = a(ri, k) / a(rk, k);
            if (f == 0.0) continue;
            a(ri, k) = 0.0;
            for (std::size_t j = k + 1; j < n; ++j) a(ri, j) -= f * a(rk, j);
            b[ri] -= f * b[rk];
        }
    }
    Vector x(n);
    for (std::size_t k = n; k-- > 0;) {
        const std::size_t rk = perm[k];
        double s = b[rk];
        for (std::size_t j = k + 1; j < n; ++j) s -= a(rk, j) * x[j];
        x[k] = s / a(rk, k);
    }
    b = x;
    return true;
}

/// Convenience wrapper that keeps the inputs intact.
inline bool solve(const Matrix& a, const Vector& b, Vector& x, double pivot_tol = 1e-13) {
    Matrix ac = a;
    Vector bc = b;
    if (!solve_inplace(ac, bc, pivot_tol)) return false;
    x = bc;
    return true;
}

} // namespace treedual
