#include "optshift/linalg.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "optshift/errors.hpp"

namespace optshift {

namespace {

void swap_rows(Matrix& m, std::size_t a, std::size_t b) {
    if (a == b) return;
    for (std::size_t j = 0; j < m.cols(); ++j) std::swap(m(a, j), m(b, j));
}

Matrix take_rows(const Matrix& m, std::size_t count) {
    Matrix out(count, m.cols());
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j);
    return out;
}

}  // namespace

EliminationResult gaussian_eliminate(const Matrix& lhs, const Matrix& rhs, double pivot_tol) {
    if (lhs.rows() != rhs.rows()) throw ShapeError("gaussian_eliminate: row count mismatch");
    if (!(pivot_tol > 0.0)) throw std::invalid_argument("gaussian_eliminate: pivot_tol must be > 0");

    const std::size_t b = lhs.rows();
    const std::size_t m = lhs.cols();
    const std::size_t n = rhs.cols();
    Matrix a = lhs;
    Matrix z = rhs;

    const double pivot_abs = pivot_tol * max_abs(lhs);
    const double rhs_abs = pivot_tol * std::max(1.0, max_abs(rhs));

    std::size_t pr = 0;  // next pivot row
    std::vector<std::size_t> pivot_cols;
    for (std::size_t col = 0; col < m && pr < b; ++col) {
        std::size_t best = pr;
        double best_mag = std::fabs(a(pr, col));
        for (std::size_t r = pr + 1; r < b; ++r) {
            const double mag = std::fabs(a(r, col));
            if (mag > best_mag) {
                best_mag = mag;
                best = r;
            }
        }
        if (best_mag <= pivot_abs) continue;  // no usable pivot in this column
        swap_rows(a, pr, best);
        swap_rows(z, pr, best);
        const double pivot = a(pr, col);
        for (std::size_t r = pr + 1; r < b; ++r) {
            const double f = a(r, col) / pivot;
            if (f == 0.0) continue;
            a(r, col) = 0.0;
            for (std::size_t j = col + 1; j < m; ++j) a(r, j) -= f * a(pr, j);
            for (std::size_t j = 0; j < n; ++j) z(r, j) -= f * z(pr, j);
        }
        pivot_cols.push_back(col);
        ++pr;
    }

    // Rows below pr were fully eliminated on the left; their rhs must be
    // negligible or the system has no solution.
    for (std::size_t r = pr; r < b; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
            if (std::fabs(z(r, j)) > rhs_abs) {
                throw InconsistentSystemError(
                    "gaussian_eliminate: dropped row " + std::to_string(r) +
                    " has rhs residual " + format_real(std::fabs(z(r, j))) +
                    " > " + format_real(rhs_abs) + "; the system has no solution");
            }
        }
    }

    EliminationResult res;
    res.rank = pr;
    res.dropped_rows = b - pr;
    res.pivot_cols = std::move(pivot_cols);
    res.reduced_lhs = take_rows(a, pr);
    res.reduced_rhs = take_rows(z, pr);
    return res;
}

Matrix cholesky_factor(const Matrix& g) {
    if (g.rows() != g.cols()) throw ShapeError("cholesky: matrix not square");
    const std::size_t n = g.rows();
    Matrix l(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        double d = g(j, j);
        for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
        if (!(d > 0.0)) {
            throw NotPositiveDefiniteError("cholesky: non-positive pivot " + format_real(d) +
                                           " at index " + std::to_string(j));
        }
        l(j, j) = std::sqrt(d);
        for (std::size_t i = j + 1; i < n; ++i) {
            double s = g(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            l(i, j) = s / l(j, j);
        }
    }
    return l;
}

Matrix spd_solve(const Matrix& g, const Matrix& b) {
    if (g.rows() != g.cols()) throw ShapeError("spd_solve: matrix not square");
    if (b.rows() != g.rows()) throw ShapeError("spd_solve: rhs row count mismatch");
    const double scale = max_abs(g);
    for (std::size_t i = 0; i < g.rows(); ++i) {
        for (std::size_t j = i + 1; j < g.cols(); ++j) {
            if (std::fabs(g(i, j) - g(j, i)) > 1e-10 * scale) {
                throw ShapeError("spd_solve: matrix not symmetric");
            }
        }
    }
    if (g.rows() == 0) return b;

    const Matrix l = cholesky_factor(g);
    const std::size_t n = g.rows();
    const std::size_t k = b.cols();

    // L*y = b, then L^T*x = y, one rhs column at a time.
    Matrix x(n, k);
    std::vector<double> y(n);
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            double s = b(i, c);
            for (std::size_t j = 0; j < i; ++j) s -= l(i, j) * y[j];
            y[i] = s / l(i, i);
        }
        for (std::size_t ii = n; ii-- > 0;) {
            double s = y[ii];
            for (std::size_t j = ii + 1; j < n; ++j) s -= l(j, ii) * x(j, c);
            x(ii, c) = s / l(ii, ii);
        }
    }
    return x;
}

}  // namespace optshift
