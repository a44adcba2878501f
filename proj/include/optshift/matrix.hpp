#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

namespace optshift {

// Dense row-major matrix of 64-bit reals. The universal carrier for inputs,
// weights, activations and probe vectors.
class Matrix {
public:
    Matrix() = default;

    // Zero-filled.
    Matrix(std::size_t rows, std::size_t cols)
        : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

    // Takes ownership of data; length must be rows*cols and every entry finite.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    double* row(std::size_t i) { return data_.data() + i * cols_; }
    const double* row(std::size_t i) const { return data_.data() + i * cols_; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool is_finite() const;

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Standard product with fixed left-to-right accumulation over the inner index,
// so results are bit-stable and match a naive triple loop exactly.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

double frobenius_norm_sq(const Matrix& m);
double frobenius_norm(const Matrix& m);
double max_abs(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Formats a double with 17 significant digits; round-trips through decimal.
std::string format_real(double v);

// Text format: first line "rows cols", then one line of space-separated reals
// per row at 17 significant digits.
void write_matrix_text(std::ostream& out, const Matrix& m);
Matrix read_matrix_text(std::istream& in);

}  // namespace optshift
