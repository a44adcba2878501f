#pragma once

#include <cstddef>
#include <vector>

#include "optshift/matrix.hpp"

namespace optshift {

// Row-echelon reduction of the augmented block [lhs | rhs]. Rows whose lhs
// entries all fall below the pivot threshold are dropped; the surviving rows
// are linearly independent and preserve the solution set of lhs*V = rhs.
struct EliminationResult {
    Matrix reduced_lhs;                   // r x m
    Matrix reduced_rhs;                   // r x n
    std::size_t rank = 0;                 // r
    std::vector<std::size_t> pivot_cols;  // one column per surviving row
    std::size_t dropped_rows = 0;
};

// Forward elimination with partial pivoting. pivot_tol is relative: the
// absolute pivot threshold is pivot_tol * max initial |entry| of lhs. A
// dropped row whose rhs entries exceed pivot_tol * max(1, max initial |rhs|)
// signals an unsolvable system and raises InconsistentSystemError.
EliminationResult gaussian_eliminate(const Matrix& lhs, const Matrix& rhs, double pivot_tol);

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
// Throws NotPositiveDefiniteError on a non-positive pivot.
Matrix cholesky_factor(const Matrix& g);

// Solves g*X = b for symmetric positive definite g via Cholesky.
// g must be symmetric to within 1e-10 * max|g| entrywise.
Matrix spd_solve(const Matrix& g, const Matrix& b);

}  // namespace optshift
