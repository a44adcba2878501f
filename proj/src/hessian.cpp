#include "optshift/hessian.hpp"

#include <cmath>
#include <map>
#include <ostream>

#include <nlohmann/json.hpp>

#include "optshift/errors.hpp"
#include "optshift/rng.hpp"

namespace optshift {

double exact_last_layer_trace(const MlpModel& model, const Matrix& inputs, const Matrix& targets,
                              LossKind kind) {
    if (inputs.rows() == 0) throw ShapeError("exact_last_layer_trace: empty dataset");
    ForwardTrace trace;
    const Matrix logits = model.forward(inputs, trace);
    const Matrix& feats = model.layers().size() == 1 ? inputs : trace.post.back();
    const Matrix d2 = loss_second_derivative_diag(logits, targets, kind);
    double total = 0.0;
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
        double feat_sq = 0.0;
        const double* f = feats.row(i);
        for (std::size_t j = 0; j < feats.cols(); ++j) feat_sq += f[j] * f[j];
        double curv = 0.0;
        const double* d = d2.row(i);
        for (std::size_t p = 0; p < d2.cols(); ++p) curv += d[p];
        total += curv * feat_sq;
    }
    return total / static_cast<double>(inputs.rows());
}

namespace {

double vec_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

double default_eps(const std::vector<double>& w) {
    double mx = 0.0;
    for (double x : w) mx = std::max(mx, std::fabs(x));
    return 1e-4 * (1.0 + mx);
}

}  // namespace

std::vector<double> hvp(const MlpModel& model, const Matrix& inputs, const Matrix& targets,
                        LossKind kind, const std::vector<double>& v, double eps) {
    const double norm = vec_norm(v);
    if (!(norm > 1e-150) || !std::isfinite(norm)) {
        throw std::invalid_argument("hvp: direction norm must be positive");
    }
    const std::vector<double> w = model.flatten_params();
    if (v.size() != w.size()) throw ShapeError("hvp: direction length mismatch");
    if (!(eps > 0.0)) eps = default_eps(w);

    MlpModel probe = model;
    std::vector<double> shifted = w;
    const double step = eps / norm;
    for (std::size_t i = 0; i < w.size(); ++i) shifted[i] = w[i] + step * v[i];
    probe.unflatten_params(shifted);
    const std::vector<double> g_plus = loss_and_grad(probe, inputs, targets, kind).second.flatten();
    for (std::size_t i = 0; i < w.size(); ++i) shifted[i] = w[i] - step * v[i];
    probe.unflatten_params(shifted);
    const std::vector<double> g_minus = loss_and_grad(probe, inputs, targets, kind).second.flatten();

    std::vector<double> out(w.size());
    const double scale = norm / (2.0 * eps);
    for (std::size_t i = 0; i < w.size(); ++i) {
        out[i] = (g_plus[i] - g_minus[i]) * scale;
        if (!std::isfinite(out[i])) {
            throw StepSizeError("hvp: non-finite result; try a larger eps");
        }
    }
    return out;
}

LinearOp make_hvp_op(const MlpModel& model, const Matrix& inputs, const Matrix& targets,
                     LossKind kind, double eps) {
    return [model, inputs, targets, kind, eps](const std::vector<double>& v) {
        return hvp(model, inputs, targets, kind, v, eps);
    };
}

namespace {

TraceEstimate hutchinson_impl(const LinearOp& op, std::size_t dim, std::size_t lo, std::size_t hi,
                              std::size_t probes, std::uint64_t seed) {
    if (probes < 2) throw std::invalid_argument("hutchinson: need at least 2 probes");
    if (hi > dim || lo >= hi) throw std::invalid_argument("hutchinson: bad block bounds");
    std::vector<double> samples(probes);
    std::vector<double> z(dim, 0.0);
    for (std::size_t p = 0; p < probes; ++p) {
        Rng rng(derive_seed(seed, streams::kHutchinson, p));
        for (std::size_t i = lo; i < hi; ++i) z[i] = (rng.next_u64() & 1u) ? 1.0 : -1.0;
        const std::vector<double> y = op(z);
        double q = 0.0;
        for (std::size_t i = lo; i < hi; ++i) q += z[i] * y[i];
        samples[p] = q;
        for (std::size_t i = lo; i < hi; ++i) z[i] = 0.0;
    }
    double mean = 0.0;
    for (double s : samples) mean += s;
    mean /= static_cast<double>(probes);
    double var = 0.0;
    for (double s : samples) var += (s - mean) * (s - mean);
    var /= static_cast<double>(probes - 1);
    TraceEstimate est;
    est.estimate = mean;
    est.stderr_ = std::sqrt(var / static_cast<double>(probes));
    est.probes = probes;
    return est;
}

}  // namespace

TraceEstimate hutchinson_trace(const LinearOp& op, std::size_t dim, std::size_t probes,
                               std::uint64_t seed) {
    return hutchinson_impl(op, dim, 0, dim, probes, seed);
}

TraceEstimate hutchinson_trace_block(const LinearOp& op, std::size_t dim, std::size_t lo,
                                     std::size_t hi, std::size_t probes, std::uint64_t seed) {
    return hutchinson_impl(op, dim, lo, hi, probes, seed);
}

TopEig top_eigenvalue(const LinearOp& op, std::size_t dim, std::size_t max_iters, double tol,
                      std::uint64_t seed) {
    if (max_iters < 1) throw std::invalid_argument("top_eigenvalue: need at least 1 iteration");
    Rng rng(derive_seed(seed, streams::kPowerInit));
    std::vector<double> v(dim);
    for (double& x : v) x = rng.normal();
    const double n0 = vec_norm(v);
    for (double& x : v) x /= n0;

    TopEig result;
    double prev = 0.0;
    for (std::size_t it = 1; it <= max_iters; ++it) {
        const std::vector<double> y = op(v);
        double lambda = 0.0;
        for (std::size_t i = 0; i < dim; ++i) lambda += v[i] * y[i];
        double resid = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double r = y[i] - lambda * v[i];
            resid += r * r;
        }
        resid = std::sqrt(resid);
        result.value = lambda;
        result.iters = it;
        const double scale = std::max(1.0, std::fabs(lambda));
        if (resid <= tol * scale || (it > 1 && std::fabs(lambda - prev) <= tol * scale)) {
            result.converged = true;
            return result;
        }
        prev = lambda;
        const double ny = vec_norm(y);
        if (ny == 0.0) {  // operator annihilated the iterate
            result.value = 0.0;
            result.converged = true;
            return result;
        }
        for (std::size_t i = 0; i < dim; ++i) v[i] = y[i] / ny;
    }
    result.converged = false;
    return result;
}

NcReport nc1_metric(const Matrix& features, const std::vector<int>& labels) {
    if (features.rows() != labels.size()) throw ShapeError("nc1: label count mismatch");
    if (features.rows() == 0) throw ShapeError("nc1: empty feature set");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
    if (by_class.size() < 2) {
        throw std::invalid_argument("nc1: between-class scatter undefined with a single class");
    }

    const std::size_t d = features.cols();
    std::vector<double> global_mean(d, 0.0);
    for (std::size_t i = 0; i < features.rows(); ++i) {
        const double* row = features.row(i);
        for (std::size_t j = 0; j < d; ++j) global_mean[j] += row[j];
    }
    for (double& v : global_mean) v /= static_cast<double>(features.rows());

    double within = 0.0;
    double between = 0.0;
    for (const auto& [cls, idx] : by_class) {
        std::vector<double> mu(d, 0.0);
        for (std::size_t i : idx) {
            const double* row = features.row(i);
            for (std::size_t j = 0; j < d; ++j) mu[j] += row[j];
        }
        for (double& v : mu) v /= static_cast<double>(idx.size());
        for (std::size_t i : idx) {
            const double* row = features.row(i);
            for (std::size_t j = 0; j < d; ++j) {
                const double c = row[j] - mu[j];
                within += c * c;
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            const double c = mu[j] - global_mean[j];
            between += c * c;
        }
    }
    NcReport r;
    r.within_class_scatter = within / static_cast<double>(features.rows());
    r.between_class_scatter = between / static_cast<double>(by_class.size());
    if (!(r.between_class_scatter > 0.0)) {
        throw std::invalid_argument("nc1: between-class scatter is zero");
    }
    r.nc1_ratio = r.within_class_scatter / r.between_class_scatter;
    return r;
}

HessianReport hessian_report(const MlpModel& model, const Matrix& inputs, const Matrix& targets,
                             LossKind kind, const HessianOptions& opts) {
    HessianReport rep;
    rep.exact_last_layer_trace = exact_last_layer_trace(model, inputs, targets, kind);
    const LinearOp op = make_hvp_op(model, inputs, targets, kind, opts.eps);
    const std::size_t dim = model.param_count();
    TraceEstimate est;
    if (opts.last_layer_only) {
        const auto [lo, hi] = model.final_weight_span();
        est = hutchinson_trace_block(op, dim, lo, hi, opts.probes, opts.seed);
        rep.scope = "last-layer";
    } else {
        est = hutchinson_trace(op, dim, opts.probes, opts.seed);
        rep.scope = "all-parameters";
    }
    rep.hutchinson_trace = est.estimate;
    rep.hutchinson_stderr = est.stderr_;
    rep.probes = est.probes;
    const TopEig top = top_eigenvalue(op, dim, opts.power_iters, opts.power_tol, opts.seed);
    rep.top_eigenvalue = top.value;
    rep.power_iters = top.iters;
    rep.top_converged = top.converged;
    return rep;
}

void write_hessian_json(std::ostream& out, const HessianReport& report) {
    nlohmann::ordered_json j;
    j["exact_last_layer_trace"] = report.exact_last_layer_trace;
    j["hutchinson_trace"] = report.hutchinson_trace;
    j["hutchinson_stderr"] = report.hutchinson_stderr;
    j["probes"] = report.probes;
    j["top_eigenvalue"] = report.top_eigenvalue;
    j["power_iters"] = report.power_iters;
    j["top_converged"] = report.top_converged;
    j["scope"] = report.scope;
    out << j.dump(2) << '\n';
}

}  // namespace optshift
