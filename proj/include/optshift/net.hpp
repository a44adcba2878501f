#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "optshift/matrix.hpp"

namespace optshift {

enum class LossKind { CrossEntropy, MeanSquaredError };

struct LinearLayer {
    Matrix weight;             // in x out
    std::vector<double> bias;  // out
};

// Per-layer forward record: pre-activations, post-activations and the 0/1
// ReLU masks for the hidden layers. The last layer has no activation, so
// post/mask have one entry fewer than pre.
struct ForwardTrace {
    std::vector<Matrix> pre;
    std::vector<Matrix> post;
    std::vector<Matrix> relu_mask;
};

// Fully connected ReLU network. The final layer's weight is the optimum
// shifting target: its in-dim is m, its out-dim is the class count n.
class MlpModel {
public:
    MlpModel() = default;
    explicit MlpModel(std::vector<LinearLayer> layers);

    // Glorot-uniform weights in +/-sqrt(6/(fan_in+fan_out)), zero biases.
    static MlpModel random(const std::vector<std::size_t>& dims, std::uint64_t seed);

    const std::vector<LinearLayer>& layers() const { return layers_; }
    std::vector<LinearLayer>& layers() { return layers_; }
    LinearLayer& final_layer() { return layers_.back(); }
    const LinearLayer& final_layer() const { return layers_.back(); }

    std::size_t input_dim() const { return layers_.front().weight.rows(); }
    std::size_t output_dim() const { return layers_.back().weight.cols(); }
    std::size_t final_in_dim() const { return layers_.back().weight.rows(); }
    std::vector<std::size_t> dims() const;

    Matrix forward(const Matrix& inputs) const;
    Matrix forward(const Matrix& inputs, ForwardTrace& trace) const;

    // Input to the final linear layer, one row per sample.
    Matrix penultimate_activations(const Matrix& inputs) const;

    std::size_t param_count() const;
    std::vector<double> flatten_params() const;
    void unflatten_params(const std::vector<double>& flat);

    // Flat-vector offset of the final layer's weight block.
    std::pair<std::size_t, std::size_t> final_weight_span() const;

private:
    std::vector<LinearLayer> layers_;
};

struct Gradients {
    std::vector<Matrix> weight;
    std::vector<std::vector<double>> bias;
    std::vector<double> flatten() const;
};

Matrix softmax(const Matrix& logits);
Matrix one_hot(const std::vector<int>& labels, std::size_t classes);
double accuracy(const Matrix& logits, const std::vector<int>& labels);

// Mean loss over the batch. Cross-entropy accepts one-hot or soft target rows;
// MSE is (1/n) sum_i ||f(x_i) - y_i||^2.
double loss_only(const MlpModel& model, const Matrix& inputs, const Matrix& targets, LossKind kind);

double loss_from_logits(const Matrix& logits, const Matrix& targets, LossKind kind);

std::pair<double, Gradients> loss_and_grad(const MlpModel& model, const Matrix& inputs,
                                           const Matrix& targets, LossKind kind);

// Diagonal second derivative of the per-sample loss with respect to each
// logit: sigma_p*(1-sigma_p) for cross-entropy, 2 for MSE. The batch-mean 1/n
// factor is applied by callers that aggregate over samples.
Matrix loss_second_derivative_diag(const Matrix& logits, const Matrix& targets, LossKind kind);

// Checkpoint text format; 17-significant-digit reals round-trip bit-exactly.
void save_checkpoint(std::ostream& out, const MlpModel& model, std::uint64_t seed,
                     std::size_t epoch);
struct Checkpoint {
    MlpModel model;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
};
Checkpoint load_checkpoint(std::istream& in);

}  // namespace optshift
