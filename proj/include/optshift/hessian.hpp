#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "optshift/matrix.hpp"
#include "optshift/net.hpp"

namespace optshift {

// y = H*v for a symmetric operator that is never materialized.
using LinearOp = std::function<std::vector<double>(const std::vector<double>&)>;

struct TraceEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
    std::size_t probes = 0;
};

struct TopEig {
    double value = 0.0;
    std::size_t iters = 0;
    bool converged = false;
};

struct HessianReport {
    double exact_last_layer_trace = 0.0;
    double hutchinson_trace = 0.0;
    double hutchinson_stderr = 0.0;
    std::size_t probes = 0;
    double top_eigenvalue = 0.0;
    std::size_t power_iters = 0;
    bool top_converged = false;
    std::string scope;  // "last-layer" or "all-parameters"
};

// First term of the Hessian-trace split: (1/n) sum_i sum_p d2_ip * ||a_i||^2,
// where a_i is the final layer's input and d2 the per-sample diagonal loss
// curvature at the logits. Exact, no sampling.
double exact_last_layer_trace(const MlpModel& model, const Matrix& inputs, const Matrix& targets,
                              LossKind kind);

// Central-difference Hessian-vector product over the flattened parameters:
// (g(w + eps*v^) - g(w - eps*v^)) / (2 eps) * ||v||.  eps <= 0 selects the
// default 1e-4 * (1 + max|w|).
std::vector<double> hvp(const MlpModel& model, const Matrix& inputs, const Matrix& targets,
                        LossKind kind, const std::vector<double>& v, double eps = 0.0);

LinearOp make_hvp_op(const MlpModel& model, const Matrix& inputs, const Matrix& targets,
                     LossKind kind, double eps = 0.0);

// Rademacher-probe trace estimator; per-probe seeds derive from (seed, probe
// index), so estimates are reproducible and can be paired across calls.
TraceEstimate hutchinson_trace(const LinearOp& op, std::size_t dim, std::size_t probes,
                               std::uint64_t seed);

// Same estimator with probe support restricted to indices [lo, hi): estimates
// the trace of that diagonal block.
TraceEstimate hutchinson_trace_block(const LinearOp& op, std::size_t dim, std::size_t lo,
                                     std::size_t hi, std::size_t probes, std::uint64_t seed);

// Power iteration returning the magnitude-dominant eigenvalue (signed
// Rayleigh quotient). Converges on either a small Rayleigh-quotient change or
// a small residual ||Hv - lambda v||.
TopEig top_eigenvalue(const LinearOp& op, std::size_t dim, std::size_t max_iters, double tol,
                      std::uint64_t seed);

// Neural-collapse variability: mean squared distance of features to their
// class mean over the mean squared distance of class means to the global
// mean.
struct NcReport {
    double within_class_scatter = 0.0;
    double between_class_scatter = 0.0;
    double nc1_ratio = 0.0;
};
NcReport nc1_metric(const Matrix& features, const std::vector<int>& labels);

struct HessianOptions {
    std::size_t probes = 100;
    std::uint64_t seed = 0;
    double eps = 0.0;  // 0 = default rule
    std::size_t power_iters = 200;
    double power_tol = 1e-9;
    bool last_layer_only = false;  // restrict probing to the final weight block
};
HessianReport hessian_report(const MlpModel& model, const Matrix& inputs, const Matrix& targets,
                             LossKind kind, const HessianOptions& opts);

void write_hessian_json(std::ostream& out, const HessianReport& report);

}  // namespace optshift
