#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "optshift/data.hpp"
#include "optshift/errors.hpp"
#include "optshift/net.hpp"
#include "optshift/trainer.hpp"
#include "oracles.hpp"

using namespace optshift;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("optshift_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void push_be32(std::vector<std::uint8_t>& v, std::uint32_t x) {
    v.push_back((x >> 24) & 0xFF);
    v.push_back((x >> 16) & 0xFF);
    v.push_back((x >> 8) & 0xFF);
    v.push_back(x & 0xFF);
}

std::vector<std::uint8_t> idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                                     std::uint8_t fill) {
    std::vector<std::uint8_t> v;
    push_be32(v, 0x00000803u);
    push_be32(v, count);
    push_be32(v, rows);
    push_be32(v, cols);
    for (std::uint32_t i = 0; i < count * rows * cols; ++i)
        v.push_back(static_cast<std::uint8_t>(fill + i % 7));
    return v;
}

std::vector<std::uint8_t> idx_labels(const std::vector<std::uint8_t>& labels) {
    std::vector<std::uint8_t> v;
    push_be32(v, 0x00000801u);
    push_be32(v, static_cast<std::uint32_t>(labels.size()));
    v.insert(v.end(), labels.begin(), labels.end());
    return v;
}

// Nearest class mean in the normalized feature space.
double nearest_mean_accuracy(const Dataset& train, const Dataset& test) {
    Matrix means(train.class_count, train.features());
    std::vector<std::size_t> counts(train.class_count, 0);
    for (std::size_t i = 0; i < train.size(); ++i) {
        const std::size_t c = static_cast<std::size_t>(train.labels[i]);
        ++counts[c];
        for (std::size_t j = 0; j < train.features(); ++j) means(c, j) += train.inputs(i, j);
    }
    for (std::size_t c = 0; c < train.class_count; ++c)
        for (std::size_t j = 0; j < train.features(); ++j)
            means(c, j) /= static_cast<double>(counts[c]);

    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        double best = 1e300;
        std::size_t arg = 0;
        for (std::size_t c = 0; c < train.class_count; ++c) {
            double d = 0.0;
            for (std::size_t j = 0; j < test.features(); ++j) {
                const double diff = test.inputs(i, j) - means(c, j);
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                arg = c;
            }
        }
        if (static_cast<int>(arg) == test.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test.size());
}

}  // namespace

TEST_CASE("near-zero noise makes nearest-mean classification perfect") {
    BlobSpec spec;
    spec.classes = 4;
    spec.dim = 8;
    spec.mean_scale = 3.0;
    spec.noise = 1e-9;
    spec.train_size = 200;
    spec.test_size = 100;
    spec.seed = 1;
    const auto [train_ds, test_ds] = generate_blobs(spec);
    CHECK(nearest_mean_accuracy(train_ds, test_ds) == 1.0);
}

TEST_CASE("zero separation pins accuracy at chance level") {
    BlobSpec spec;
    spec.classes = 4;
    spec.dim = 8;
    spec.mean_scale = 0.0;
    spec.noise = 1.0;
    spec.train_size = 2000;
    spec.test_size = 2000;
    spec.seed = 2;
    const auto [train_ds, test_ds] = generate_blobs(spec);
    const double acc = nearest_mean_accuracy(train_ds, test_ds);
    const double p = 1.0 / static_cast<double>(spec.classes);
    const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(spec.test_size));
    CHECK(std::fabs(acc - p) <= 3.0 * sigma);
}

TEST_CASE("separable blobs train a linear classifier past 95%") {
    BlobSpec spec;
    spec.classes = 3;
    spec.dim = 20;
    spec.mean_scale = 4.0;
    spec.noise = 1.0;
    spec.train_size = 600;
    spec.test_size = 300;
    spec.seed = 3;
    const auto [train_ds, test_ds] = generate_blobs(spec);

    MlpModel model = MlpModel::random({20, 3}, 3);
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 32;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    cfg.seed = 3;
    const auto rows = train(model, train_ds, test_ds, cfg);
    CHECK(rows.back().test_acc >= 0.95);
}

TEST_CASE("blob generation is a pure function of the spec") {
    BlobSpec spec;
    spec.seed = 4;
    spec.train_size = 50;
    spec.test_size = 20;
    const auto [a_train, a_test] = generate_blobs(spec);
    const auto [b_train, b_test] = generate_blobs(spec);
    CHECK(a_train.inputs == b_train.inputs);
    CHECK(a_test.inputs == b_test.inputs);
    CHECK(a_train.labels == b_train.labels);
}

TEST_CASE("splits are disjoint and balanced by construction") {
    BlobSpec spec;
    spec.classes = 5;
    spec.train_size = 100;
    spec.test_size = 50;
    spec.seed = 5;
    const auto [train_ds, test_ds] = generate_blobs(spec);
    CHECK(train_ds.size() == 100);
    CHECK(test_ds.size() == 50);
    CHECK(train_ds.split == "train");
    CHECK(test_ds.split == "test");
    std::vector<std::size_t> counts(5, 0);
    for (int label : train_ds.labels) ++counts[static_cast<std::size_t>(label)];
    for (std::size_t c : counts) CHECK(c == 20);
}

TEST_CASE("normalization round-trips to the originals") {
    BlobSpec spec;
    spec.seed = 6;
    spec.train_size = 80;
    spec.test_size = 40;
    const auto [train_ds, test_ds] = generate_blobs(spec);

    // Regenerate the raw draws by replaying the generator without stats.
    const Matrix raw_train = denormalized_inputs(train_ds);
    const Matrix raw_test = denormalized_inputs(test_ds);
    Matrix renorm = raw_train;
    for (std::size_t i = 0; i < renorm.rows(); ++i)
        for (std::size_t j = 0; j < renorm.cols(); ++j)
            renorm(i, j) = (renorm(i, j) - train_ds.feature_mean[j]) / train_ds.feature_std[j];
    CHECK(max_abs_diff(renorm, train_ds.inputs) <=
          1e-12 * std::max(1.0, max_abs(train_ds.inputs)));
    CHECK(raw_test.is_finite());
}

TEST_CASE("dataset text export carries the matrix block plus labels") {
    BlobSpec spec;
    spec.seed = 7;
    spec.classes = 2;
    spec.dim = 3;
    spec.train_size = 4;
    spec.test_size = 2;
    const auto [train_ds, test_ds] = generate_blobs(spec);
    std::stringstream ss;
    export_dataset_text(ss, train_ds);
    const Matrix parsed = read_matrix_text(ss);
    CHECK(parsed == train_ds.inputs);
    std::vector<int> labels(train_ds.size());
    for (auto& l : labels) ss >> l;
    CHECK(labels == train_ds.labels);
}

TEST_CASE("idx reader parses synthetic files and validates headers") {
    const fs::path dir = temp_dir("mnist");
    write_bytes(dir / "train-images-idx3-ubyte", idx_images(6, 4, 4, 10));
    write_bytes(dir / "train-labels-idx1-ubyte", idx_labels({0, 1, 2, 3, 4, 5}));
    write_bytes(dir / "t10k-images-idx3-ubyte", idx_images(3, 4, 4, 100));
    write_bytes(dir / "t10k-labels-idx1-ubyte", idx_labels({7, 8, 9}));

    const auto [train_ds, test_ds] = load_mnist(dir.string());
    CHECK(train_ds.size() == 6);
    CHECK(test_ds.size() == 3);
    CHECK(train_ds.features() == 16);
    CHECK(train_ds.class_count == 10);
    CHECK(test_ds.labels == std::vector<int>{7, 8, 9});
    CHECK(train_ds.inputs.is_finite());
    fs::remove_all(dir);
}

TEST_CASE("idx reader names expected and actual lengths on truncation") {
    const fs::path dir = temp_dir("mnist_trunc");
    auto bytes = idx_images(6, 4, 4, 10);
    bytes.resize(bytes.size() - 5);
    write_bytes(dir / "train-images-idx3-ubyte", bytes);
    write_bytes(dir / "train-labels-idx1-ubyte", idx_labels({0, 1, 2, 3, 4, 5}));
    write_bytes(dir / "t10k-images-idx3-ubyte", idx_images(3, 4, 4, 100));
    write_bytes(dir / "t10k-labels-idx1-ubyte", idx_labels({7, 8, 9}));
    try {
        load_mnist(dir.string());
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("expected 112 bytes, got 107") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("idx reader rejects bad magic and out-of-range labels") {
    const fs::path dir = temp_dir("mnist_bad");
    auto bad_magic = idx_images(1, 2, 2, 0);
    bad_magic[3] = 0x01;  // corrupt the magic
    write_bytes(dir / "train-images-idx3-ubyte", bad_magic);
    write_bytes(dir / "train-labels-idx1-ubyte", idx_labels({0}));
    write_bytes(dir / "t10k-images-idx3-ubyte", idx_images(1, 2, 2, 0));
    write_bytes(dir / "t10k-labels-idx1-ubyte", idx_labels({0}));
    CHECK_THROWS_AS(load_mnist(dir.string()), FormatError);

    write_bytes(dir / "train-images-idx3-ubyte", idx_images(1, 2, 2, 0));
    write_bytes(dir / "train-labels-idx1-ubyte", idx_labels({12}));
    CHECK_THROWS_AS(load_mnist(dir.string()), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("cifar reader parses one synthetic record per batch file") {
    const fs::path dir = temp_dir("cifar");
    std::vector<std::uint8_t> record(3073, 0);
    record[0] = 7;
    for (std::size_t i = 1; i < record.size(); ++i)
        record[i] = static_cast<std::uint8_t>(i % 251);
    for (int b = 1; b <= 5; ++b) {
        auto rec = record;
        rec[0] = static_cast<std::uint8_t>(b - 1);
        write_bytes(dir / ("data_batch_" + std::to_string(b) + ".bin"), rec);
    }
    write_bytes(dir / "test_batch.bin", record);

    const auto [train_ds, test_ds] = load_cifar10(dir.string());
    CHECK(train_ds.size() == 5);
    CHECK(test_ds.size() == 1);
    CHECK(test_ds.labels[0] == 7);
    CHECK(test_ds.features() == 3072);
    // Channel normalization: pixel p=1 sits in the red channel.
    const double expect = (double(record[1]) / 255.0 - 0.4914) / 0.2023;
    CHECK(test_ds.inputs(0, 0) == doctest::Approx(expect));
    fs::remove_all(dir);
}

TEST_CASE("cifar reader rejects misaligned files") {
    const fs::path dir = temp_dir("cifar_bad");
    for (int b = 1; b <= 5; ++b) {
        write_bytes(dir / ("data_batch_" + std::to_string(b) + ".bin"),
                    std::vector<std::uint8_t>(3073, 0));
    }
    write_bytes(dir / "test_batch.bin", std::vector<std::uint8_t>(3072, 0));  // short by one
    CHECK_THROWS_AS(load_cifar10(dir.string()), FormatError);
    fs::remove_all(dir);
}

TEST_CASE("real dataset files, when installed, satisfy the published shapes") {
    const char* mnist_dir = std::getenv("OPTSHIFT_MNIST_DIR");
    if (mnist_dir && fs::exists(fs::path(mnist_dir) / "train-images-idx3-ubyte")) {
        const auto [train_ds, test_ds] = load_mnist(mnist_dir);
        CHECK(train_ds.size() == 60000);
        CHECK(test_ds.size() == 10000);
        CHECK(train_ds.features() == 784);
    } else {
        MESSAGE("MNIST files not present; skipping real-data check");
    }

    const char* cifar_dir = std::getenv("OPTSHIFT_CIFAR_DIR");
    if (cifar_dir && fs::exists(fs::path(cifar_dir) / "data_batch_1.bin")) {
        const auto [train_ds, test_ds] = load_cifar10(cifar_dir);
        CHECK(train_ds.size() == 50000);
        CHECK(test_ds.size() == 10000);
        // Normalized per-channel means sit near zero.
        for (int ch = 0; ch < 3; ++ch) {
            double mean = 0.0;
            for (std::size_t i = 0; i < train_ds.size(); ++i)
                for (std::size_t p = 1024 * ch; p < 1024 * (ch + 1); ++p)
                    mean += train_ds.inputs(i, p);
            mean /= static_cast<double>(train_ds.size() * 1024);
            CHECK(std::fabs(mean) <= 0.02);
        }
    } else {
        MESSAGE("CIFAR-10 files not present; skipping real-data check");
    }
}
