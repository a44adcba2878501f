#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <utility>

#include "optshift/linalg.hpp"
#include "optshift/matrix.hpp"
#include "optshift/net.hpp"

namespace optshift {

enum class SamplingMode { Uniform, ClassStratified };

struct OsConfig {
    std::size_t batch_size = 0;  // b2, rows fed to the shift
    double pivot_tol = 1e-10;
    SamplingMode sampling = SamplingMode::Uniform;
    std::uint64_t seed = 0;
    double max_logit_drift = 1e-6;
};

// Before/after record of one optimum-shifting application. loss_before/after
// carry the shift-batch loss when emitted from training and the full-set loss
// when emitted from a standalone application.
struct OsReport {
    double norm_before = 0.0;  // ||V||_F
    double norm_after = 0.0;
    std::size_t rank = 0;
    std::size_t batch_rows = 0;
    double logit_drift = 0.0;  // max-abs change of A*V over the batch
    std::optional<double> loss_before;
    std::optional<double> loss_after;
    double elapsed_ms = 0.0;
};

// Penultimate-layer activations A (one row per sample, no bias column) and
// the final layer's current pre-bias products Z = A*V.
std::pair<Matrix, Matrix> extract_system(const MlpModel& model, const Matrix& batch_inputs);

// Minimum-Frobenius-norm V with a*V = z. Reduces the system to independent
// rows first, then solves V = A'^T (A' A'^T)^{-1} Z' via Cholesky. A rank-0
// system yields the zero matrix. On a failed factorization a single jittered
// retry is attempted before giving up.
Matrix solve_min_norm(const Matrix& a, const Matrix& z, double pivot_tol);

// Replaces the final layer's weight with the minimum-norm solution over the
// given batch, leaving the bias and all other parameters untouched. Verifies
// the report invariants (norm non-increase, bounded logit drift) and throws
// ContractError if either fails.
OsReport apply_os(MlpModel& model, const Matrix& batch_inputs, const OsConfig& cfg);

// One JSON object per line with fields norm_before, norm_after, rank,
// batch_rows, logit_drift, loss_before, loss_after, elapsed_ms.
void append_os_report_jsonl(std::ostream& out, const OsReport& report);

}  // namespace optshift
