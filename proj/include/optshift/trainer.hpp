#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "optshift/data.hpp"
#include "optshift/net.hpp"
#include "optshift/rng.hpp"
#include "optshift/shift.hpp"

namespace optshift {

enum class LrSchedule { Step, Cosine };

struct StepSchedule {
    std::vector<double> milestones = {0.5, 0.75};  // fractions of total epochs
    double factor = 0.1;
};

struct SosSettings {
    OsConfig os;
    std::size_t frequency = 1;   // apply every k-th epoch, starting at epoch 0
    bool log_full_loss = false;  // record full-train-set loss in the reports
};

struct TrainConfig {
    std::size_t epochs = 0;
    std::size_t batch_size = 64;  // b1
    double lr = 0.1;
    double momentum = 0.9;
    bool nesterov = true;
    double weight_decay = 1e-4;
    LrSchedule schedule = LrSchedule::Step;
    StepSchedule step;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::CrossEntropy;
    std::optional<double> mixup_alpha;
    std::optional<double> sam_rho;
    std::optional<SosSettings> sos;
};

struct MetricsRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_loss = 0.0;
    double test_acc = 0.0;
    double v_frob_norm = 0.0;
    double lr = 0.0;
    bool sos_applied = false;
    std::optional<double> hessian_trace;
};

struct TrainHooks {
    std::function<void(const MetricsRow&)> on_epoch;
    std::function<void(const OsReport&)> on_os_report;
    // Evaluated once per epoch when set; fills MetricsRow::hessian_trace.
    std::function<std::optional<double>(const MlpModel&, std::size_t epoch)> hessian_trace;
    std::function<void(const MlpModel&, std::size_t epoch)> on_checkpoint;
    std::size_t checkpoint_every = 0;  // 0 disables on_checkpoint
};

// Nesterov momentum buffers, one per parameter tensor.
struct SgdState {
    std::vector<Matrix> weight_vel;
    std::vector<std::vector<double>> bias_vel;
    void ensure_shape(const MlpModel& model);
};

double lr_at(const TrainConfig& cfg, std::size_t epoch);

// One SGD step with classic L2 weight decay folded into the gradient:
//   g <- grad + wd*w;  v <- mu*v + g;  w <- w - lr*(g + mu*v)   (nesterov)
//   g <- grad + wd*w;  v <- mu*v + g;  w <- w - lr*v            (plain momentum)
double sgd_step(MlpModel& model, SgdState& state, const Matrix& inputs, const Matrix& targets,
                const TrainConfig& cfg, double lr);

// Sharpness-aware step: perturb parameters by rho*g/||g||_2 (global norm),
// take the gradient there, restore, then apply the SGD update with that
// gradient. A zero gradient norm skips the perturbation.
double sam_step(MlpModel& model, SgdState& state, const Matrix& inputs, const Matrix& targets,
                const TrainConfig& cfg, double lr);

// Convex combination x~ = lam*x_i + (1-lam)*x_j with rows paired by perm.
void mixup_apply(Matrix& inputs, Matrix& targets, double lambda,
                 const std::vector<std::size_t>& perm);

// Draws lambda ~ Beta(alpha, alpha) and a pairing permutation from rng.
double mixup_batch(Matrix& inputs, Matrix& targets, double alpha, Rng& rng);

// Shift-batch row indices: uniform without replacement, or stratified with
// near-equal per-class counts. Deterministic in (cfg.seed, counter).
std::vector<std::size_t> sample_os_indices(const Dataset& ds, const OsConfig& cfg,
                                           std::uint64_t counter);

struct EvalResult {
    double loss = 0.0;
    double acc = 0.0;
};
EvalResult evaluate(const MlpModel& model, const Dataset& ds, LossKind kind);

// Full training loop: when shifting is enabled, one application per eligible
// epoch runs before that epoch's SGD steps. Deterministic given cfg.seed.
std::vector<MetricsRow> train(MlpModel& model, const Dataset& train_ds, const Dataset& test_ds,
                              const TrainConfig& cfg, const TrainHooks& hooks = {});

// Exact MetricsRow header:
// epoch,train_loss,train_acc,test_loss,test_acc,v_frob_norm,lr,sos_applied,hessian_trace
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& row);
void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);

}  // namespace optshift
