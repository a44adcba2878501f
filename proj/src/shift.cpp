#include "optshift/shift.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "optshift/errors.hpp"

namespace optshift {

std::pair<Matrix, Matrix> extract_system(const MlpModel& model, const Matrix& batch_inputs) {
    Matrix a = model.penultimate_activations(batch_inputs);
    Matrix z = matmul(a, model.final_layer().weight);
    return {std::move(a), std::move(z)};
}

namespace {

Matrix min_norm_from_reduced(const EliminationResult& red, std::size_t unknowns) {
    if (red.rank == 0) {
        // Every V solves the empty system; the zero matrix has minimal norm.
        return Matrix(unknowns, red.reduced_rhs.cols());
    }
    const Matrix at = transpose(red.reduced_lhs);
    const Matrix gram = matmul(red.reduced_lhs, at);
    Matrix y;
    try {
        y = spd_solve(gram, red.reduced_rhs);
    } catch (const NotPositiveDefiniteError&) {
        // One jittered retry; the reduced rows are independent, so a failure
        // here means the Gram matrix is singular only to rounding.
        Matrix damped = gram;
        const double jitter = 1e-12 * std::max(1.0, max_abs(gram));
        for (std::size_t i = 0; i < damped.rows(); ++i) damped(i, i) += jitter;
        try {
            y = spd_solve(damped, red.reduced_rhs);
        } catch (const NotPositiveDefiniteError&) {
            throw NotPositiveDefiniteError(
                "solve_min_norm: Gram matrix not positive definite after reduction; "
                "increase pivot_tol so nearly dependent rows are dropped");
        }
    }
    return matmul(at, y);
}

}  // namespace

Matrix solve_min_norm(const Matrix& a, const Matrix& z, double pivot_tol) {
    const EliminationResult red = gaussian_eliminate(a, z, pivot_tol);
    return min_norm_from_reduced(red, a.cols());
}

OsReport apply_os(MlpModel& model, const Matrix& batch_inputs, const OsConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t m = model.final_in_dim();
    if (batch_inputs.rows() >= m) {
        std::cerr << "warning: shift batch (" << batch_inputs.rows()
                  << " rows) >= feature dim (" << m
                  << "); system may be fully determined and the weight unchanged\n";
    }

    auto [a, z] = extract_system(model, batch_inputs);
    const EliminationResult red = gaussian_eliminate(a, z, cfg.pivot_tol);
    Matrix v_star = min_norm_from_reduced(red, m);

    OsReport report;
    report.norm_before = frobenius_norm(model.final_layer().weight);
    report.norm_after = frobenius_norm(v_star);
    report.rank = red.rank;
    report.batch_rows = batch_inputs.rows();
    report.logit_drift = max_abs_diff(matmul(a, v_star), z);

    if (!(report.norm_after <= report.norm_before + 1e-9 * (1.0 + report.norm_before))) {
        throw ContractError("apply_os: norm increased from " + format_real(report.norm_before) +
                            " to " + format_real(report.norm_after));
    }
    if (!(report.logit_drift <= cfg.max_logit_drift)) {
        throw ContractError("apply_os: logit drift " + format_real(report.logit_drift) +
                            " exceeds " + format_real(cfg.max_logit_drift));
    }

    model.final_layer().weight = std::move(v_star);

    const auto end = std::chrono::steady_clock::now();
    report.elapsed_ms = std::chrono::duration<double, std::milli>(end - start).count();
    return report;
}

void append_os_report_jsonl(std::ostream& out, const OsReport& report) {
    nlohmann::ordered_json j;
    j["norm_before"] = report.norm_before;
    j["norm_after"] = report.norm_after;
    j["rank"] = report.rank;
    j["batch_rows"] = report.batch_rows;
    j["logit_drift"] = report.logit_drift;
    j["loss_before"] = report.loss_before ? nlohmann::ordered_json(*report.loss_before)
                                          : nlohmann::ordered_json(nullptr);
    j["loss_after"] = report.loss_after ? nlohmann::ordered_json(*report.loss_after)
                                        : nlohmann::ordered_json(nullptr);
    j["elapsed_ms"] = report.elapsed_ms;
    out << j.dump() << '\n';
}

}  // namespace optshift
