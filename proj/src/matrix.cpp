#include "optshift/matrix.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

#include "optshift/errors.hpp"

namespace optshift {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix: data length " + std::to_string(data_.size()) +
                         " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
    if (!is_finite()) throw std::invalid_argument("matrix: non-finite entry");
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

bool Matrix::is_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix c(a.rows(), b.cols());
    const std::size_t n = b.cols();
    // k-major update; each output entry still accumulates in ascending k,
    // identical to the naive i,j,k loop.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* crow = c.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const double* brow = b.row(k);
            for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

Matrix transpose(const Matrix& m) {
    Matrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

double frobenius_norm_sq(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data()) s += v * v;
    return s;
}

double frobenius_norm(const Matrix& m) { return std::sqrt(frobenius_norm_sq(m)); }

double max_abs(const Matrix& m) {
    double s = 0.0;
    for (double v : m.data()) s = std::max(s, std::fabs(v));
    return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("max_abs_diff: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i)
        s = std::max(s, std::fabs(a.data()[i] - b.data()[i]));
    return s;
}

std::string format_real(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_matrix_text(std::ostream& out, const Matrix& m) {
    out << m.rows() << ' ' << m.cols() << '\n';
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            if (j) out << ' ';
            out << format_real(m(i, j));
        }
        out << '\n';
    }
}

Matrix read_matrix_text(std::istream& in) {
    std::size_t rows = 0, cols = 0;
    if (!(in >> rows >> cols)) throw FormatError("matrix text: missing 'rows cols' header");
    std::vector<double> data(rows * cols);
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!(in >> data[i])) {
            throw FormatError("matrix text: expected " + std::to_string(rows * cols) +
                              " entries, got " + std::to_string(i));
        }
    }
    return Matrix(rows, cols, std::move(data));
}

}  // namespace optshift
