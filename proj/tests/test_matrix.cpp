#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <sstream>

#include "optshift/errors.hpp"
#include "optshift/matrix.hpp"
#include "oracles.hpp"

using namespace optshift;

TEST_CASE("matmul identity") {
    const Matrix m = oracle::random_matrix(3, 5, 11);
    CHECK(matmul(Matrix::identity(3), m) == m);
}

TEST_CASE("matmul hand-computed 2x2 * 2x1") {
    const Matrix a(2, 2, {1, 2, 3, 4});
    const Matrix b(2, 1, {1, 1});
    const Matrix c = matmul(a, b);
    CHECK(c(0, 0) == 3.0);
    CHECK(c(1, 0) == 7.0);
}

TEST_CASE("matmul matches naive triple loop bit for bit") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const Matrix a = oracle::random_matrix(5, 7, 100 + seed);
        const Matrix b = oracle::random_matrix(7, 3, 200 + seed);
        CHECK(matmul(a, b) == oracle::naive_matmul(a, b));
    }
}

TEST_CASE("matmul shape mismatch") {
    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("matmul is deterministic") {
    const Matrix a = oracle::random_matrix(6, 6, 42);
    const Matrix b = oracle::random_matrix(6, 6, 43);
    CHECK(matmul(a, b) == matmul(a, b));
}

TEST_CASE("matmul associativity within tolerance") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Matrix a = oracle::random_matrix(8, 8, 300 + seed);
        const Matrix b = oracle::random_matrix(8, 8, 400 + seed);
        const Matrix c = oracle::random_matrix(8, 8, 500 + seed);
        const Matrix left = matmul(matmul(a, b), c);
        const Matrix right = matmul(a, matmul(b, c));
        const double scale = std::max({max_abs(left), max_abs(right), 1.0});
        CHECK(max_abs_diff(left, right) <= 1e-10 * scale);
    }
}

TEST_CASE("frobenius norm squared") {
    CHECK(frobenius_norm_sq(Matrix(4, 4)) == 0.0);
    CHECK(frobenius_norm_sq(Matrix(1, 2, {3, 4})) == 25.0);

    const Matrix m = oracle::random_matrix(10, 10, 7);
    double expect = 0.0;
    for (double v : m.data()) expect += v * v;
    CHECK(frobenius_norm_sq(m) == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("construction rejects size and non-finite entries") {
    CHECK_THROWS_AS(Matrix(2, 2, {1.0, 2.0, 3.0}), ShapeError);
    CHECK_THROWS_AS(Matrix(1, 2, {1.0, std::numeric_limits<double>::quiet_NaN()}),
                    std::invalid_argument);
    CHECK_THROWS_AS(Matrix(1, 1, {std::numeric_limits<double>::infinity()}),
                    std::invalid_argument);
}

TEST_CASE("kernels leave entries finite") {
    const Matrix a = oracle::random_matrix(9, 4, 17, -100.0, 100.0);
    const Matrix b = oracle::random_matrix(4, 6, 18, -100.0, 100.0);
    CHECK(matmul(a, b).is_finite());
    CHECK(transpose(a).is_finite());
}

TEST_CASE("matrix text format round-trips at 17 significant digits") {
    const Matrix m = oracle::random_matrix(5, 3, 23, -1e6, 1e6);
    std::stringstream ss;
    write_matrix_text(ss, m);
    CHECK(read_matrix_text(ss) == m);

    std::stringstream truncated("2 2\n1.0 2.0\n3.0\n");
    CHECK_THROWS_AS(read_matrix_text(truncated), FormatError);
}
