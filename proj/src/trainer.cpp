#include "optshift/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "optshift/errors.hpp"
#include "optshift/rng.hpp"

namespace optshift {

void SgdState::ensure_shape(const MlpModel& model) {
    if (weight_vel.size() == model.layers().size()) return;
    weight_vel.clear();
    bias_vel.clear();
    for (const auto& l : model.layers()) {
        weight_vel.emplace_back(l.weight.rows(), l.weight.cols());
        bias_vel.emplace_back(l.bias.size(), 0.0);
    }
}

double lr_at(const TrainConfig& cfg, std::size_t epoch) {
    if (cfg.schedule == LrSchedule::Cosine) {
        if (cfg.epochs == 0) return cfg.lr;
        const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs);
        return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
    }
    double lr = cfg.lr;
    for (double frac : cfg.step.milestones) {
        const auto boundary = static_cast<std::size_t>(frac * static_cast<double>(cfg.epochs));
        if (epoch >= boundary) lr *= cfg.step.factor;
    }
    return lr;
}

namespace {

void apply_update(MlpModel& model, SgdState& state, const Gradients& grads,
                  const TrainConfig& cfg, double lr) {
    state.ensure_shape(model);
    const double mu = cfg.momentum;
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
        auto& layer = model.layers()[l];
        auto step_tensor = [&](double* w, const double* g, double* v, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                const double gi = g[i] + cfg.weight_decay * w[i];
                if (mu != 0.0) {
                    v[i] = mu * v[i] + gi;
                    w[i] -= lr * (cfg.nesterov ? gi + mu * v[i] : v[i]);
                } else {
                    w[i] -= lr * gi;
                }
            }
        };
        step_tensor(layer.weight.data().data(), grads.weight[l].data().data(),
                    state.weight_vel[l].data().data(), layer.weight.size());
        step_tensor(layer.bias.data(), grads.bias[l].data(), state.bias_vel[l].data(),
                    layer.bias.size());
    }
}

double grad_global_norm(const Gradients& grads) {
    double s = 0.0;
    for (const auto& w : grads.weight)
        for (double v : w.data()) s += v * v;
    for (const auto& b : grads.bias)
        for (double v : b) s += v * v;
    return std::sqrt(s);
}

}  // namespace

double sgd_step(MlpModel& model, SgdState& state, const Matrix& inputs, const Matrix& targets,
                const TrainConfig& cfg, double lr) {
    auto [loss, grads] = loss_and_grad(model, inputs, targets, cfg.loss);
    apply_update(model, state, grads, cfg, lr);
    return loss;
}

double sam_step(MlpModel& model, SgdState& state, const Matrix& inputs, const Matrix& targets,
                const TrainConfig& cfg, double lr) {
    const double rho = cfg.sam_rho.value_or(0.0);
    auto [loss, grads] = loss_and_grad(model, inputs, targets, cfg.loss);
    const double gnorm = grad_global_norm(grads);
    if (rho > 0.0 && gnorm > 0.0) {
        const std::vector<double> saved = model.flatten_params();
        std::vector<double> perturbed = saved;
        const std::vector<double> flat_g = grads.flatten();
        const double scale = rho / gnorm;
        for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += scale * flat_g[i];
        model.unflatten_params(perturbed);
        grads = loss_and_grad(model, inputs, targets, cfg.loss).second;
        model.unflatten_params(saved);
    }
    apply_update(model, state, grads, cfg, lr);
    return loss;
}

void mixup_apply(Matrix& inputs, Matrix& targets, double lambda,
                 const std::vector<std::size_t>& perm) {
    if (perm.size() != inputs.rows() || targets.rows() != inputs.rows()) {
        throw ShapeError("mixup: permutation/target size mismatch");
    }
    const Matrix in_orig = inputs;
    const Matrix tg_orig = targets;
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
        const std::size_t j = perm[i];
        for (std::size_t c = 0; c < inputs.cols(); ++c)
            inputs(i, c) = lambda * in_orig(i, c) + (1.0 - lambda) * in_orig(j, c);
        for (std::size_t c = 0; c < targets.cols(); ++c)
            targets(i, c) = lambda * tg_orig(i, c) + (1.0 - lambda) * tg_orig(j, c);
    }
}

double mixup_batch(Matrix& inputs, Matrix& targets, double alpha, Rng& rng) {
    if (!(alpha > 0.0)) throw std::invalid_argument("mixup: alpha must be > 0");
    const double lambda = rng.beta(alpha, alpha);
    const std::vector<std::size_t> perm = rng.permutation(inputs.rows());
    mixup_apply(inputs, targets, lambda, perm);
    return lambda;
}

std::vector<std::size_t> sample_os_indices(const Dataset& ds, const OsConfig& cfg,
                                           std::uint64_t counter) {
    if (cfg.batch_size == 0) throw std::invalid_argument("shift batch size must be >= 1");
    const std::size_t want = std::min(cfg.batch_size, ds.size());
    Rng rng(derive_seed(cfg.seed, streams::kSosSample, counter));
    if (cfg.sampling == SamplingMode::Uniform) {
        return rng.sample_without_replacement(ds.size(), want);
    }

    // Stratified: near-equal per-class counts, remainders assigned to the
    // lowest class ids, shortfall refilled uniformly from unused rows.
    std::vector<std::vector<std::size_t>> by_class(ds.class_count);
    for (std::size_t i = 0; i < ds.size(); ++i)
        by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    std::vector<std::size_t> picked;
    std::vector<bool> used(ds.size(), false);
    const std::size_t base = want / ds.class_count;
    const std::size_t extra = want % ds.class_count;
    for (std::size_t c = 0; c < ds.class_count; ++c) {
        const std::size_t quota = base + (c < extra ? 1 : 0);
        const auto& pool = by_class[c];
        const std::size_t take = std::min(quota, pool.size());
        for (std::size_t k : rng.sample_without_replacement(pool.size(), take)) {
            picked.push_back(pool[k]);
            used[pool[k]] = true;
        }
    }
    if (picked.size() < want) {
        std::vector<std::size_t> leftovers;
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (!used[i]) leftovers.push_back(i);
        for (std::size_t k :
             rng.sample_without_replacement(leftovers.size(), want - picked.size())) {
            picked.push_back(leftovers[k]);
        }
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

EvalResult evaluate(const MlpModel& model, const Dataset& ds, LossKind kind) {
    const Matrix targets = one_hot(ds.labels, ds.class_count);
    constexpr std::size_t kChunk = 1024;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < ds.size(); begin += kChunk) {
        const std::size_t end = std::min(begin + kChunk, ds.size());
        std::vector<std::size_t> idx(end - begin);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = begin + i;
        const Matrix in = gather_rows(ds.inputs, idx);
        const Matrix tg = gather_rows(targets, idx);
        const Matrix logits = model.forward(in);
        loss_sum += loss_from_logits(logits, tg, kind) * static_cast<double>(idx.size());
        for (std::size_t i = 0; i < logits.rows(); ++i) {
            const double* row = logits.row(i);
            std::size_t arg = 0;
            for (std::size_t j = 1; j < logits.cols(); ++j)
                if (row[j] > row[arg]) arg = j;
            if (static_cast<int>(arg) == ds.labels[idx[i]]) ++correct;
        }
    }
    EvalResult r;
    r.loss = loss_sum / static_cast<double>(ds.size());
    r.acc = static_cast<double>(correct) / static_cast<double>(ds.size());
    return r;
}

std::vector<MetricsRow> train(MlpModel& model, const Dataset& train_ds, const Dataset& test_ds,
                              const TrainConfig& cfg, const TrainHooks& hooks) {
    if (cfg.batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
    if (cfg.mixup_alpha && !(*cfg.mixup_alpha > 0.0))
        throw std::invalid_argument("train: mixup alpha must be > 0");
    if (cfg.sam_rho && !(*cfg.sam_rho > 0.0))
        throw std::invalid_argument("train: sam rho must be > 0");
    if (cfg.sos) {
        if (cfg.sos->os.batch_size == 0)
            throw std::invalid_argument("train: shift batch size must be >= 1");
        if (cfg.sos->frequency == 0)
            throw std::invalid_argument("train: shift frequency must be >= 1");
        if (cfg.sos->os.batch_size < train_ds.class_count) {
            std::cerr << "warning: shift batch " << cfg.sos->os.batch_size
                      << " is below the class count " << train_ds.class_count << "\n";
        }
    }

    const Matrix train_targets = one_hot(train_ds.labels, train_ds.class_count);
    SgdState state;
    std::vector<MetricsRow> rows;
    rows.reserve(cfg.epochs);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(cfg, epoch);
        bool sos_applied = false;

        if (cfg.sos && epoch % cfg.sos->frequency == 0) {
            const auto idx = sample_os_indices(train_ds, cfg.sos->os, epoch);
            const Matrix batch_in = gather_rows(train_ds.inputs, idx);
            const Matrix batch_tg = gather_rows(train_targets, idx);
            const double batch_loss_before = loss_only(model, batch_in, batch_tg, cfg.loss);
            const double full_before =
                cfg.sos->log_full_loss ? evaluate(model, train_ds, cfg.loss).loss : 0.0;

            OsReport report = apply_os(model, batch_in, cfg.sos->os);

            const double batch_loss_after = loss_only(model, batch_in, batch_tg, cfg.loss);
            if (cfg.sos->log_full_loss) {
                report.loss_before = full_before;
                report.loss_after = evaluate(model, train_ds, cfg.loss).loss;
            } else {
                report.loss_before = batch_loss_before;
                report.loss_after = batch_loss_after;
            }
            // Logits on the shift batch are preserved up to the solve
            // residual, so the batch loss may not move; enforced once the
            // schedule is at least half done.
            const double delta = std::fabs(batch_loss_after - batch_loss_before);
            if (2 * epoch >= cfg.epochs && delta > 1e-6) {
                throw ContractError("shift changed the batch loss by " + format_real(delta) +
                                    " at epoch " + std::to_string(epoch));
            }
            if (hooks.on_os_report) hooks.on_os_report(report);
            sos_applied = true;
        }

        Rng shuffle_rng(derive_seed(cfg.seed, streams::kShuffle, epoch));
        Rng mixup_rng(derive_seed(cfg.seed, streams::kMixup, epoch));
        const std::vector<std::size_t> order = shuffle_rng.permutation(train_ds.size());
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
            const std::size_t end = std::min(begin + cfg.batch_size, order.size());
            const std::vector<std::size_t> idx(order.begin() + begin, order.begin() + end);
            Matrix in = gather_rows(train_ds.inputs, idx);
            Matrix tg = gather_rows(train_targets, idx);
            if (cfg.mixup_alpha) mixup_batch(in, tg, *cfg.mixup_alpha, mixup_rng);
            const double loss = cfg.sam_rho ? sam_step(model, state, in, tg, cfg, lr)
                                            : sgd_step(model, state, in, tg, cfg, lr);
            if (!std::isfinite(loss)) {
                throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch),
                                      epoch);
            }
        }

        MetricsRow row;
        row.epoch = epoch;
        const EvalResult tr = evaluate(model, train_ds, cfg.loss);
        const EvalResult te = evaluate(model, test_ds, cfg.loss);
        row.train_loss = tr.loss;
        row.train_acc = tr.acc;
        row.test_loss = te.loss;
        row.test_acc = te.acc;
        row.v_frob_norm = frobenius_norm(model.final_layer().weight);
        row.lr = lr;
        row.sos_applied = sos_applied;
        if (hooks.hessian_trace) row.hessian_trace = hooks.hessian_trace(model, epoch);
        if (!std::isfinite(row.train_loss) || !std::isfinite(row.test_loss)) {
            throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch),
                                  epoch);
        }
        if (hooks.on_epoch) hooks.on_epoch(row);
        if (hooks.on_checkpoint && hooks.checkpoint_every > 0 &&
            (epoch + 1) % hooks.checkpoint_every == 0) {
            hooks.on_checkpoint(model, epoch + 1);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string metrics_csv_header() {
    return "epoch,train_loss,train_acc,test_loss,test_acc,v_frob_norm,lr,sos_applied,hessian_trace";
}

std::string metrics_csv_row(const MetricsRow& row) {
    std::ostringstream os;
    os << row.epoch << ',' << format_real(row.train_loss) << ',' << format_real(row.train_acc)
       << ',' << format_real(row.test_loss) << ',' << format_real(row.test_acc) << ','
       << format_real(row.v_frob_norm) << ',' << format_real(row.lr) << ','
       << (row.sos_applied ? 1 : 0) << ',';
    if (row.hessian_trace) os << format_real(*row.hessian_trace);
    return os.str();
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
    out << metrics_csv_header() << '\n';
    for (const auto& row : rows) out << metrics_csv_row(row) << '\n';
}

}  // namespace optshift
