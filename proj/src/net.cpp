#include "optshift/net.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "optshift/errors.hpp"
#include "optshift/rng.hpp"

namespace optshift {

namespace {

// h = x*W + bias, one bias row broadcast over the batch.
Matrix affine(const Matrix& x, const LinearLayer& layer) {
    Matrix out = matmul(x, layer.weight);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double* row = out.row(i);
        for (std::size_t j = 0; j < out.cols(); ++j) row[j] += layer.bias[j];
    }
    return out;
}

void check_targets(const Matrix& logits, const Matrix& targets) {
    if (targets.rows() != logits.rows() || targets.cols() != logits.cols()) {
        throw ShapeError("loss: target shape mismatch");
    }
}

}  // namespace

MlpModel::MlpModel(std::vector<LinearLayer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw ShapeError("model: no layers");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        if (layers_[l].bias.size() != layers_[l].weight.cols()) {
            throw ShapeError("model: bias length mismatch at layer " + std::to_string(l));
        }
        if (l > 0 && layers_[l - 1].weight.cols() != layers_[l].weight.rows()) {
            throw ShapeError("model: layer dims do not chain at layer " + std::to_string(l));
        }
    }
}

MlpModel MlpModel::random(const std::vector<std::size_t>& dims, std::uint64_t seed) {
    if (dims.size() < 2) throw ShapeError("model: need at least input and output dims");
    Rng rng(derive_seed(seed, streams::kModelInit));
    std::vector<LinearLayer> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const std::size_t fan_in = dims[l];
        const std::size_t fan_out = dims[l + 1];
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Matrix w(fan_in, fan_out);
        for (double& v : w.data()) v = rng.uniform(-bound, bound);
        layers.push_back({std::move(w), std::vector<double>(fan_out, 0.0)});
    }
    return MlpModel(std::move(layers));
}

std::vector<std::size_t> MlpModel::dims() const {
    std::vector<std::size_t> d;
    d.push_back(layers_.front().weight.rows());
    for (const auto& l : layers_) d.push_back(l.weight.cols());
    return d;
}

Matrix MlpModel::forward(const Matrix& inputs) const {
    if (inputs.cols() != input_dim()) throw ShapeError("forward: input dim mismatch");
    Matrix h = inputs;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Matrix pre = affine(h, layers_[l]);
        if (l + 1 == layers_.size()) return pre;
        for (double& v : pre.data()) v = v > 0.0 ? v : 0.0;
        h = std::move(pre);
    }
    return h;  // unreachable
}

Matrix MlpModel::forward(const Matrix& inputs, ForwardTrace& trace) const {
    if (inputs.cols() != input_dim()) throw ShapeError("forward: input dim mismatch");
    trace.pre.clear();
    trace.post.clear();
    trace.relu_mask.clear();
    Matrix h = inputs;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Matrix pre = affine(h, layers_[l]);
        trace.pre.push_back(pre);
        if (l + 1 == layers_.size()) return pre;
        Matrix mask(pre.rows(), pre.cols());
        for (std::size_t i = 0; i < pre.data().size(); ++i) {
            const bool on = pre.data()[i] > 0.0;  // subgradient at 0 is 0
            mask.data()[i] = on ? 1.0 : 0.0;
            if (!on) pre.data()[i] = 0.0;
        }
        trace.relu_mask.push_back(std::move(mask));
        trace.post.push_back(pre);
        h = std::move(pre);
    }
    return h;  // unreachable
}

Matrix MlpModel::penultimate_activations(const Matrix& inputs) const {
    if (layers_.size() == 1) return inputs;
    ForwardTrace trace;
    forward(inputs, trace);
    return trace.post.back();
}

std::size_t MlpModel::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

std::vector<double> MlpModel::flatten_params() const {
    std::vector<double> flat;
    flat.reserve(param_count());
    for (const auto& l : layers_) {
        flat.insert(flat.end(), l.weight.data().begin(), l.weight.data().end());
        flat.insert(flat.end(), l.bias.begin(), l.bias.end());
    }
    return flat;
}

void MlpModel::unflatten_params(const std::vector<double>& flat) {
    if (flat.size() != param_count()) throw ShapeError("unflatten: length mismatch");
    std::size_t pos = 0;
    for (auto& l : layers_) {
        for (double& v : l.weight.data()) v = flat[pos++];
        for (double& v : l.bias) v = flat[pos++];
    }
}

std::pair<std::size_t, std::size_t> MlpModel::final_weight_span() const {
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
        offset += layers_[l].weight.size() + layers_[l].bias.size();
    }
    return {offset, offset + layers_.back().weight.size()};
}

std::vector<double> Gradients::flatten() const {
    std::vector<double> flat;
    for (std::size_t l = 0; l < weight.size(); ++l) {
        flat.insert(flat.end(), weight[l].data().begin(), weight[l].data().end());
        flat.insert(flat.end(), bias[l].begin(), bias[l].end());
    }
    return flat;
}

Matrix softmax(const Matrix& logits) {
    Matrix out = logits;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double* row = out.row(i);
        double mx = row[0];
        for (std::size_t j = 1; j < out.cols(); ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < out.cols(); ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < out.cols(); ++j) row[j] /= sum;
    }
    return out;
}

Matrix one_hot(const std::vector<int>& labels, std::size_t classes) {
    Matrix t(labels.size(), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
            throw std::invalid_argument("one_hot: label " + std::to_string(labels[i]) +
                                        " outside [0, " + std::to_string(classes) + ")");
        }
        t(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return t;
}

double accuracy(const Matrix& logits, const std::vector<int>& labels) {
    if (logits.rows() != labels.size()) throw ShapeError("accuracy: row count mismatch");
    if (logits.rows() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const double* row = logits.row(i);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < logits.cols(); ++j) {
            if (row[j] > row[arg]) arg = j;
        }
        if (static_cast<int>(arg) == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

namespace {

// Mean loss and its gradient at the logits.
std::pair<double, Matrix> loss_at_logits(const Matrix& logits, const Matrix& targets,
                                         LossKind kind) {
    check_targets(logits, targets);
    const std::size_t n = logits.rows();
    if (n == 0) throw ShapeError("loss: empty batch");
    const double inv_n = 1.0 / static_cast<double>(n);
    double loss = 0.0;
    Matrix grad(logits.rows(), logits.cols());
    if (kind == LossKind::MeanSquaredError) {
        for (std::size_t i = 0; i < logits.data().size(); ++i) {
            const double d = logits.data()[i] - targets.data()[i];
            loss += d * d;
            grad.data()[i] = 2.0 * inv_n * d;
        }
        return {loss * inv_n, std::move(grad)};
    }
    // Cross-entropy with softmax; targets are one-hot or soft rows.
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const double* row = logits.row(i);
        double mx = row[0];
        for (std::size_t j = 1; j < logits.cols(); ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) sum += std::exp(row[j] - mx);
        const double log_sum = std::log(sum);
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            const double log_p = row[j] - mx - log_sum;
            const double p = std::exp(log_p);
            loss -= targets(i, j) * log_p;
            grad(i, j) = inv_n * (p - targets(i, j));
        }
    }
    return {loss * inv_n, std::move(grad)};
}

}  // namespace

double loss_only(const MlpModel& model, const Matrix& inputs, const Matrix& targets,
                 LossKind kind) {
    return loss_at_logits(model.forward(inputs), targets, kind).first;
}

double loss_from_logits(const Matrix& logits, const Matrix& targets, LossKind kind) {
    return loss_at_logits(logits, targets, kind).first;
}

std::pair<double, Gradients> loss_and_grad(const MlpModel& model, const Matrix& inputs,
                                           const Matrix& targets, LossKind kind) {
    ForwardTrace trace;
    const Matrix logits = model.forward(inputs, trace);
    auto [loss, delta] = loss_at_logits(logits, targets, kind);

    const std::size_t num_layers = model.layers().size();
    Gradients grads;
    grads.weight.resize(num_layers);
    grads.bias.resize(num_layers);
    for (std::size_t li = num_layers; li-- > 0;) {
        const Matrix& layer_input = li == 0 ? inputs : trace.post[li - 1];
        grads.weight[li] = matmul(transpose(layer_input), delta);
        std::vector<double> gb(delta.cols(), 0.0);
        for (std::size_t i = 0; i < delta.rows(); ++i)
            for (std::size_t j = 0; j < delta.cols(); ++j) gb[j] += delta(i, j);
        grads.bias[li] = std::move(gb);
        if (li > 0) {
            delta = matmul(delta, transpose(model.layers()[li].weight));
            const Matrix& mask = trace.relu_mask[li - 1];
            for (std::size_t i = 0; i < delta.data().size(); ++i) delta.data()[i] *= mask.data()[i];
        }
    }
    return {loss, std::move(grads)};
}

Matrix loss_second_derivative_diag(const Matrix& logits, const Matrix& targets, LossKind kind) {
    check_targets(logits, targets);
    Matrix d2(logits.rows(), logits.cols());
    if (kind == LossKind::MeanSquaredError) {
        for (double& v : d2.data()) v = 2.0;
        return d2;
    }
    const Matrix p = softmax(logits);
    for (std::size_t i = 0; i < p.data().size(); ++i) {
        d2.data()[i] = p.data()[i] * (1.0 - p.data()[i]);
    }
    return d2;
}

void save_checkpoint(std::ostream& out, const MlpModel& model, std::uint64_t seed,
                     std::size_t epoch) {
    out << "optshift-checkpoint 1\n";
    out << "dims";
    for (std::size_t d : model.dims()) out << ' ' << d;
    out << '\n';
    out << "seed " << seed << '\n';
    out << "epoch " << epoch << '\n';
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
        const auto& layer = model.layers()[l];
        out << "weight " << l << ' ' << layer.weight.rows() << ' ' << layer.weight.cols() << '\n';
        for (std::size_t i = 0; i < layer.weight.rows(); ++i) {
            for (std::size_t j = 0; j < layer.weight.cols(); ++j) {
                if (j) out << ' ';
                out << format_real(layer.weight(i, j));
            }
            out << '\n';
        }
        out << "bias " << l << ' ' << layer.bias.size() << '\n';
        for (std::size_t j = 0; j < layer.bias.size(); ++j) {
            if (j) out << ' ';
            out << format_real(layer.bias[j]);
        }
        out << '\n';
    }
    out << "end\n";
}

Checkpoint load_checkpoint(std::istream& in) {
    std::string tag;
    int version = 0;
    if (!(in >> tag >> version) || tag != "optshift-checkpoint" || version != 1) {
        throw FormatError("checkpoint: bad header");
    }
    if (!(in >> tag) || tag != "dims") throw FormatError("checkpoint: missing dims");
    std::string line;
    std::getline(in, line);
    std::vector<std::size_t> dims;
    {
        std::size_t pos = 0;
        while (pos < line.size()) {
            while (pos < line.size() && line[pos] == ' ') ++pos;
            if (pos >= line.size()) break;
            dims.push_back(std::stoull(line.substr(pos)));
            while (pos < line.size() && line[pos] != ' ') ++pos;
        }
    }
    if (dims.size() < 2) throw FormatError("checkpoint: need at least two dims");

    Checkpoint ck;
    if (!(in >> tag >> ck.seed) || tag != "seed") throw FormatError("checkpoint: missing seed");
    if (!(in >> tag >> ck.epoch) || tag != "epoch") throw FormatError("checkpoint: missing epoch");

    std::vector<LinearLayer> layers;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        std::size_t idx = 0, r = 0, c = 0;
        if (!(in >> tag >> idx >> r >> c) || tag != "weight" || idx != l || r != dims[l] ||
            c != dims[l + 1]) {
            throw FormatError("checkpoint: bad weight header at layer " + std::to_string(l));
        }
        std::vector<double> w(r * c);
        for (double& v : w) {
            if (!(in >> v)) throw FormatError("checkpoint: truncated weight at layer " + std::to_string(l));
        }
        std::size_t blen = 0;
        if (!(in >> tag >> idx >> blen) || tag != "bias" || idx != l || blen != c) {
            throw FormatError("checkpoint: bad bias header at layer " + std::to_string(l));
        }
        std::vector<double> bias(blen);
        for (double& v : bias) {
            if (!(in >> v)) throw FormatError("checkpoint: truncated bias at layer " + std::to_string(l));
        }
        layers.push_back({Matrix(r, c, std::move(w)), std::move(bias)});
    }
    if (!(in >> tag) || tag != "end") throw FormatError("checkpoint: missing end marker");
    ck.model = MlpModel(std::move(layers));
    return ck;
}

}  // namespace optshift
