#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "optshift/data.hpp"
#include "optshift/errors.hpp"
#include "optshift/shift.hpp"
#include "optshift/trainer.hpp"
#include "oracles.hpp"

using namespace optshift;

namespace {

constexpr double kPivotTol = 1e-10;

// Literal per-column variant: eliminate [A | z_i] and solve each column of V
// on its own.
Matrix solve_min_norm_per_column(const Matrix& a, const Matrix& z, double pivot_tol) {
    Matrix v(a.cols(), z.cols());
    for (std::size_t col = 0; col < z.cols(); ++col) {
        Matrix zi(z.rows(), 1);
        for (std::size_t i = 0; i < z.rows(); ++i) zi(i, 0) = z(i, col);
        const Matrix vi = solve_min_norm(a, zi, pivot_tol);
        for (std::size_t i = 0; i < v.rows(); ++i) v(i, col) = vi(i, 0);
    }
    return v;
}

MlpModel trained_blob_model(std::uint64_t seed, std::size_t epochs, Dataset* train_out = nullptr) {
    BlobSpec spec;
    spec.classes = 3;
    spec.dim = 12;
    spec.mean_scale = 4.0;
    spec.noise = 1.0;
    spec.train_size = 240;
    spec.test_size = 60;
    spec.seed = seed;
    auto [train_ds, test_ds] = generate_blobs(spec);
    MlpModel model = MlpModel::random({12, 16, 3}, seed);
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = 32;
    cfg.lr = 0.05;
    cfg.weight_decay = 0.0;
    cfg.seed = seed;
    train(model, train_ds, test_ds, cfg);
    if (train_out) *train_out = train_ds;
    return model;
}

}  // namespace

TEST_CASE("extract_system on a single linear layer returns the raw inputs") {
    const MlpModel model = MlpModel::random({5, 3}, 1);
    const Matrix x = oracle::random_matrix(4, 5, 2);
    const auto [a, z] = extract_system(model, x);
    CHECK(a == x);
    CHECK(z == matmul(x, model.final_layer().weight));
}

TEST_CASE("dead hidden layer makes the shift a no-op on drift") {
    MlpModel model = MlpModel::random({4, 6, 2}, 3);
    for (double& b : model.layers()[0].bias) b = -100.0;  // every pre-activation negative
    const Matrix x = oracle::random_matrix(3, 4, 4, 0.0, 1.0);
    const auto [a, z] = extract_system(model, x);
    CHECK(max_abs(a) == 0.0);
    CHECK(max_abs(z) == 0.0);

    OsConfig cfg;
    cfg.batch_size = 3;
    const OsReport report = apply_os(model, x, cfg);
    CHECK(report.rank == 0);
    CHECK(report.logit_drift == 0.0);
    CHECK(report.norm_after <= report.norm_before);
}

TEST_CASE("extract_system matches an independent pre-bias forward pass") {
    const MlpModel model = MlpModel::random({6, 9, 4}, 5);
    const Matrix x = oracle::random_matrix(8, 6, 6);
    const auto [a, z] = extract_system(model, x);

    // Recompute hidden activations and pre-bias logits with plain loops.
    const auto& hidden = model.layers()[0];
    Matrix h(x.rows(), hidden.weight.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < hidden.weight.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < hidden.weight.rows(); ++k)
                s += x(i, k) * hidden.weight(k, j);
            s += hidden.bias[j];
            h(i, j) = s > 0.0 ? s : 0.0;
        }
    CHECK(max_abs_diff(a, h) == 0.0);
    CHECK(max_abs_diff(z, oracle::naive_matmul(h, model.final_layer().weight)) == 0.0);
}

TEST_CASE("square full-rank system reproduces the original weight") {
    const MlpModel model = MlpModel::random({6, 2}, 7);
    const Matrix a = oracle::random_matrix(6, 6, 8);
    const Matrix z = matmul(a, model.final_layer().weight);
    const Matrix v = solve_min_norm(a, z, kPivotTol);
    CHECK(max_abs_diff(v, model.final_layer().weight) <= 1e-10);
}

TEST_CASE("coordinate-projection hand case") {
    const Matrix a(1, 3, {1, 0, 0});
    const Matrix z(1, 2, {5, -1});
    const Matrix v = solve_min_norm(a, z, kPivotTol);
    CHECK(v(0, 0) == doctest::Approx(5.0));
    CHECK(v(0, 1) == doctest::Approx(-1.0));
    for (std::size_t i = 1; i < 3; ++i) {
        CHECK(v(i, 0) == doctest::Approx(0.0));
        CHECK(v(i, 1) == doctest::Approx(0.0));
    }
}

TEST_CASE("minimum-norm solution: oracle agreement and null-space optimality") {
    const Matrix a = oracle::random_matrix(6, 20, 9);
    const Matrix z = oracle::random_matrix(6, 4, 10);
    const Matrix v = solve_min_norm(a, z, kPivotTol);
    const Matrix v_ref = oracle::min_norm_oracle(a, z);
    CHECK(max_abs_diff(v, v_ref) <= 1e-9 * std::max(1.0, max_abs(v_ref)));
    CHECK(max_abs_diff(matmul(a, v), z) <= 1e-8 * (1.0 + max_abs(z)));

    const double base_norm = frobenius_norm(v);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const Matrix r = oracle::random_matrix(20, 4, 1100 + seed);
        const Matrix proj = solve_min_norm(a, matmul(a, r), kPivotTol);
        Matrix perturbed = v;
        for (std::size_t i = 0; i < perturbed.data().size(); ++i)
            perturbed.data()[i] += r.data()[i] - proj.data()[i];
        CHECK(base_norm <= frobenius_norm(perturbed) + 1e-9 * (1.0 + base_norm));
    }
}

TEST_CASE("per-column and joint solves are equivalent") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Matrix a = oracle::random_matrix(5, 14, 1200 + seed);
        const Matrix v0 = oracle::random_matrix(14, 3, 1300 + seed);
        const Matrix z = oracle::naive_matmul(a, v0);
        const Matrix joint = solve_min_norm(a, z, kPivotTol);
        const Matrix per_col = solve_min_norm_per_column(a, z, kPivotTol);
        CHECK(max_abs_diff(joint, per_col) <= 1e-10 * std::max(1.0, max_abs(joint)));
    }
}

TEST_CASE("apply_os on an untrained wide model preserves logits") {
    MlpModel model = MlpModel::random({784, 64, 10}, 11);
    const Matrix x = oracle::random_matrix(32, 784, 12);
    const Matrix logits_before = model.forward(x);
    const double norm_before = frobenius_norm(model.final_layer().weight);

    OsConfig cfg;
    cfg.batch_size = 32;
    const OsReport report = apply_os(model, x, cfg);

    const Matrix logits_after = model.forward(x);
    CHECK(max_abs_diff(logits_before, logits_after) <= 1e-8);
    CHECK(report.logit_drift <= 1e-8);
    CHECK(report.norm_after <= norm_before);
    CHECK(report.norm_before == doctest::Approx(norm_before));
    CHECK(report.batch_rows == 32);
    CHECK(report.rank == 32);
}

TEST_CASE("apply_os with a square full-rank batch leaves the weight unchanged") {
    MlpModel model = MlpModel::random({16, 4}, 13);
    const Matrix before = model.final_layer().weight;
    const Matrix x = oracle::random_matrix(16, 16, 14);
    OsConfig cfg;
    cfg.batch_size = 16;
    const OsReport report = apply_os(model, x, cfg);
    CHECK(report.norm_after == doctest::Approx(report.norm_before).epsilon(1e-12));
    CHECK(max_abs_diff(model.final_layer().weight, before) <= 1e-8);
}

TEST_CASE("apply_os keeps bias and upstream weights untouched") {
    MlpModel model = MlpModel::random({6, 8, 3}, 15);
    model.final_layer().bias = {0.1, -0.2, 0.3};
    const Matrix hidden_before = model.layers()[0].weight;
    const std::vector<double> bias_before = model.final_layer().bias;
    const Matrix x = oracle::random_matrix(4, 6, 16);
    OsConfig cfg;
    cfg.batch_size = 4;
    apply_os(model, x, cfg);
    CHECK(model.layers()[0].weight == hidden_before);
    CHECK(model.final_layer().bias == bias_before);
}

TEST_CASE("apply_os preserves any loss on the shift batch") {
    Dataset train_ds;
    MlpModel model = trained_blob_model(21, 12, &train_ds);
    const Matrix x = gather_rows(train_ds.inputs, {0, 1, 2, 3, 4, 5, 6, 7});
    const Matrix targets =
        gather_rows(one_hot(train_ds.labels, train_ds.class_count), {0, 1, 2, 3, 4, 5, 6, 7});

    for (LossKind kind : {LossKind::CrossEntropy, LossKind::MeanSquaredError}) {
        MlpModel scratch = model;
        const double before = loss_only(scratch, x, targets, kind);
        OsConfig cfg;
        cfg.batch_size = x.rows();
        apply_os(scratch, x, cfg);
        const double after = loss_only(scratch, x, targets, kind);
        CHECK(std::fabs(after - before) <= 1e-8);
    }
}

TEST_CASE("shifted weight lies in the row space of the reduced system") {
    MlpModel model = MlpModel::random({10, 14, 4}, 17);
    const Matrix x = oracle::random_matrix(6, 10, 18);
    OsConfig cfg;
    cfg.batch_size = 6;
    apply_os(model, x, cfg);

    const auto [a, z] = extract_system(model, x);
    (void)z;
    const Matrix& v = model.final_layer().weight;
    // Projecting onto span(rows of A) reproduces the weight.
    const Matrix proj = solve_min_norm(a, matmul(a, v), kPivotTol);
    CHECK(max_abs_diff(proj, v) <= 1e-8 * std::max(1.0, max_abs(v)));
}

TEST_CASE("apply_os is idempotent for a fixed batch") {
    MlpModel model = MlpModel::random({9, 12, 3}, 19);
    const Matrix x = oracle::random_matrix(5, 9, 20);
    OsConfig cfg;
    cfg.batch_size = 5;
    apply_os(model, x, cfg);
    const Matrix first = model.final_layer().weight;
    apply_os(model, x, cfg);
    CHECK(max_abs_diff(model.final_layer().weight, first) <=
          1e-8 * std::max(1.0, max_abs(first)));
}

TEST_CASE("full-set loss change shrinks as training converges") {
    BlobSpec spec;
    spec.classes = 3;
    spec.dim = 12;
    spec.train_size = 240;
    spec.test_size = 60;
    spec.seed = 22;
    auto [train_ds, test_ds] = generate_blobs(spec);
    const Matrix targets = one_hot(train_ds.labels, train_ds.class_count);

    auto loss_delta_after_epochs = [&](std::size_t epochs) {
        MlpModel model = MlpModel::random({12, 16, 3}, 22);
        TrainConfig cfg;
        cfg.epochs = epochs;
        cfg.batch_size = 32;
        cfg.lr = 0.05;
        cfg.weight_decay = 0.0;
        cfg.seed = 22;
        train(model, train_ds, test_ds, cfg);
        const double before = loss_only(model, train_ds.inputs, targets, LossKind::CrossEntropy);
        OsConfig os;
        os.batch_size = 8;
        os.seed = 22;
        apply_os(model, gather_rows(train_ds.inputs, sample_os_indices(train_ds, os, 0)), os);
        const double after = loss_only(model, train_ds.inputs, targets, LossKind::CrossEntropy);
        return std::fabs(after - before);
    };

    const double early = loss_delta_after_epochs(2);
    const double late = loss_delta_after_epochs(60);
    CHECK(late <= std::max(1e-3, early));
}

TEST_CASE("corrupted outputs raise an inconsistent-system error") {
    MlpModel model = MlpModel::random({4, 2}, 23);
    Matrix a(2, 4);
    for (std::size_t j = 0; j < 4; ++j) {
        a(0, j) = double(j + 1);
        a(1, j) = double(j + 1);  // duplicate row
    }
    Matrix z = matmul(a, model.final_layer().weight);
    z(1, 0) += 1.0;  // now unsatisfiable
    CHECK_THROWS_AS(solve_min_norm(a, z, kPivotTol), InconsistentSystemError);
}

TEST_CASE("report serialization uses the exact field set") {
    OsReport report;
    report.norm_before = 2.5;
    report.norm_after = 2.0;
    report.rank = 6;
    report.batch_rows = 8;
    report.logit_drift = 1e-12;
    report.elapsed_ms = 0.5;
    std::stringstream ss;
    append_os_report_jsonl(ss, report);

    const auto j = nlohmann::json::parse(ss.str());
    const std::vector<std::string> expect = {"norm_before", "norm_after",  "rank",
                                             "batch_rows",  "logit_drift", "loss_before",
                                             "loss_after",  "elapsed_ms"};
    CHECK(j.size() == expect.size());
    for (const auto& key : expect) CHECK(j.contains(key));
    CHECK(j["loss_before"].is_null());
    CHECK(j["norm_after"] == 2.0);
}
