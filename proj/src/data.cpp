#include "optshift/data.hpp"

#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>

#include "optshift/errors.hpp"
#include "optshift/rng.hpp"

namespace optshift {

namespace {

// Per-feature mean/std from the train split; near-constant features fall back
// to unit scale so the transform stays invertible.
void normalize_pair(Dataset& train, Dataset& test) {
    const std::size_t d = train.features();
    std::vector<double> mean(d, 0.0), stdev(d, 0.0);
    const double inv_n = 1.0 / static_cast<double>(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
        const double* row = train.inputs.row(i);
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (std::size_t j = 0; j < d; ++j) mean[j] *= inv_n;
    for (std::size_t i = 0; i < train.size(); ++i) {
        const double* row = train.inputs.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - mean[j];
            stdev[j] += c * c;
        }
    }
    for (std::size_t j = 0; j < d; ++j) {
        stdev[j] = std::sqrt(stdev[j] * inv_n);
        if (stdev[j] < 1e-12) stdev[j] = 1.0;
    }
    for (Dataset* ds : {&train, &test}) {
        for (std::size_t i = 0; i < ds->size(); ++i) {
            double* row = ds->inputs.row(i);
            for (std::size_t j = 0; j < d; ++j) row[j] = (row[j] - mean[j]) / stdev[j];
        }
        ds->feature_mean = mean;
        ds->feature_std = stdev;
    }
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return bytes;
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset,
                        const std::string& path) {
    if (offset + 4 > b.size()) {
        throw FormatError(path + ": truncated at byte " + std::to_string(offset) +
                          " (file length " + std::to_string(b.size()) + ")");
    }
    return (std::uint32_t(b[offset]) << 24) | (std::uint32_t(b[offset + 1]) << 16) |
           (std::uint32_t(b[offset + 2]) << 8) | std::uint32_t(b[offset + 3]);
}

struct IdxImages {
    std::size_t count = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> pixels;
};

IdxImages read_idx_images(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    const std::uint32_t magic = read_be32(bytes, 0, path);
    if (magic != 0x00000803u) {
        throw FormatError(path + ": bad image magic at byte 0 (expected 0x00000803)");
    }
    IdxImages idx;
    idx.count = read_be32(bytes, 4, path);
    idx.rows = read_be32(bytes, 8, path);
    idx.cols = read_be32(bytes, 12, path);
    const std::size_t expected = 16 + idx.count * idx.rows * idx.cols;
    if (bytes.size() != expected) {
        throw FormatError(path + ": expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));
    }
    idx.pixels.assign(bytes.begin() + 16, bytes.end());
    return idx;
}

std::vector<int> read_idx_labels(const std::string& path, std::size_t class_count) {
    const auto bytes = read_file_bytes(path);
    const std::uint32_t magic = read_be32(bytes, 0, path);
    if (magic != 0x00000801u) {
        throw FormatError(path + ": bad label magic at byte 0 (expected 0x00000801)");
    }
    const std::size_t count = read_be32(bytes, 4, path);
    const std::size_t expected = 8 + count;
    if (bytes.size() != expected) {
        throw FormatError(path + ": expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()));
    }
    std::vector<int> labels(count);
    for (std::size_t i = 0; i < count; ++i) {
        labels[i] = bytes[8 + i];
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= class_count) {
            throw FormatError(path + ": label " + std::to_string(labels[i]) + " at byte " +
                              std::to_string(8 + i) + " outside [0, " +
                              std::to_string(class_count) + ")");
        }
    }
    return labels;
}

}  // namespace

std::pair<Dataset, Dataset> generate_blobs(const BlobSpec& spec) {
    if (spec.classes < 2) throw std::invalid_argument("blobs: need at least 2 classes");
    if (spec.dim < 1) throw std::invalid_argument("blobs: dim must be >= 1");
    if (!(spec.noise > 0.0)) throw std::invalid_argument("blobs: noise must be > 0");

    Rng rng(derive_seed(spec.seed, streams::kBlobs));
    Matrix means(spec.classes, spec.dim);
    for (std::size_t c = 0; c < spec.classes; ++c) {
        double* row = means.row(c);
        double norm_sq = 0.0;
        for (std::size_t j = 0; j < spec.dim; ++j) {
            row[j] = rng.normal();
            norm_sq += row[j] * row[j];
        }
        const double norm = std::sqrt(norm_sq);
        const double scale = norm > 0.0 ? spec.mean_scale / norm : 0.0;
        for (std::size_t j = 0; j < spec.dim; ++j) row[j] *= scale;
    }

    auto make_split = [&](std::size_t count, const char* tag) {
        Dataset ds;
        ds.inputs = Matrix(count, spec.dim);
        ds.labels.resize(count);
        ds.class_count = spec.classes;
        ds.split = tag;
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t c = i % spec.classes;  // balanced by construction
            ds.labels[i] = static_cast<int>(c);
            double* row = ds.inputs.row(i);
            const double* mu = means.row(c);
            for (std::size_t j = 0; j < spec.dim; ++j) row[j] = mu[j] + spec.noise * rng.normal();
        }
        return ds;
    };

    Dataset train = make_split(spec.train_size, "train");
    Dataset test = make_split(spec.test_size, "test");
    normalize_pair(train, test);
    return {std::move(train), std::move(test)};
}

std::pair<Dataset, Dataset> load_mnist(const std::string& dir) {
    const IdxImages train_imgs = read_idx_images(dir + "/train-images-idx3-ubyte");
    const std::vector<int> train_labels = read_idx_labels(dir + "/train-labels-idx1-ubyte", 10);
    const IdxImages test_imgs = read_idx_images(dir + "/t10k-images-idx3-ubyte");
    const std::vector<int> test_labels = read_idx_labels(dir + "/t10k-labels-idx1-ubyte", 10);
    if (train_imgs.count != train_labels.size() || test_imgs.count != test_labels.size()) {
        throw FormatError(dir + ": image/label counts disagree");
    }

    const std::size_t d = train_imgs.rows * train_imgs.cols;
    auto to_unit = [d](const IdxImages& idx, std::vector<int> labels, const char* tag) {
        Dataset ds;
        ds.inputs = Matrix(idx.count, d);
        for (std::size_t i = 0; i < idx.pixels.size(); ++i)
            ds.inputs.data()[i] = static_cast<double>(idx.pixels[i]) / 255.0;
        ds.labels = std::move(labels);
        ds.class_count = 10;
        ds.split = tag;
        return ds;
    };
    Dataset train = to_unit(train_imgs, train_labels, "train");
    Dataset test = to_unit(test_imgs, test_labels, "test");

    // Scalar mean/std over all train pixels, broadcast per feature.
    double mean = 0.0;
    for (double v : train.inputs.data()) mean += v;
    mean /= static_cast<double>(train.inputs.size());
    double var = 0.0;
    for (double v : train.inputs.data()) var += (v - mean) * (v - mean);
    double stdev = std::sqrt(var / static_cast<double>(train.inputs.size()));
    if (stdev < 1e-12) stdev = 1.0;
    for (Dataset* ds : {&train, &test}) {
        for (double& v : ds->inputs.data()) v = (v - mean) / stdev;
        ds->feature_mean.assign(d, mean);
        ds->feature_std.assign(d, stdev);
    }
    return {std::move(train), std::move(test)};
}

namespace {

constexpr double kCifarMean[3] = {0.4914, 0.4822, 0.4465};
constexpr double kCifarStd[3] = {0.2023, 0.1994, 0.2010};
constexpr std::size_t kCifarRecord = 3073;  // 1 label byte + 3072 pixels
constexpr std::size_t kCifarPixels = 3072;

void append_cifar_file(const std::string& path, Dataset& ds) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() % kCifarRecord != 0) {
        throw FormatError(path + ": length " + std::to_string(bytes.size()) +
                          " not a multiple of record size " + std::to_string(kCifarRecord));
    }
    const std::size_t records = bytes.size() / kCifarRecord;
    const std::size_t base = ds.labels.size();
    Matrix grown(base + records, kCifarPixels);
    for (std::size_t i = 0; i < ds.inputs.size(); ++i) grown.data()[i] = ds.inputs.data()[i];
    ds.inputs = std::move(grown);
    ds.labels.resize(base + records);
    for (std::size_t r = 0; r < records; ++r) {
        const std::size_t off = r * kCifarRecord;
        const int label = bytes[off];
        if (label > 9) {
            throw FormatError(path + ": label " + std::to_string(label) + " at byte " +
                              std::to_string(off) + " outside [0, 10)");
        }
        ds.labels[base + r] = label;
        double* row = ds.inputs.row(base + r);
        for (std::size_t p = 0; p < kCifarPixels; ++p) {
            const std::size_t channel = p / 1024;
            const double unit = static_cast<double>(bytes[off + 1 + p]) / 255.0;
            row[p] = (unit - kCifarMean[channel]) / kCifarStd[channel];
        }
    }
}

}  // namespace

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
    Dataset train;
    train.inputs = Matrix(0, kCifarPixels);
    train.class_count = 10;
    train.split = "train";
    for (int b = 1; b <= 5; ++b) {
        append_cifar_file(dir + "/data_batch_" + std::to_string(b) + ".bin", train);
    }
    Dataset test;
    test.inputs = Matrix(0, kCifarPixels);
    test.class_count = 10;
    test.split = "test";
    append_cifar_file(dir + "/test_batch.bin", test);

    for (Dataset* ds : {&train, &test}) {
        ds->feature_mean.resize(kCifarPixels);
        ds->feature_std.resize(kCifarPixels);
        for (std::size_t p = 0; p < kCifarPixels; ++p) {
            ds->feature_mean[p] = kCifarMean[p / 1024];
            ds->feature_std[p] = kCifarStd[p / 1024];
        }
    }
    return {std::move(train), std::move(test)};
}

Matrix denormalized_inputs(const Dataset& ds) {
    Matrix out = ds.inputs;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double* row = out.row(i);
        for (std::size_t j = 0; j < out.cols(); ++j)
            row[j] = row[j] * ds.feature_std[j] + ds.feature_mean[j];
    }
    return out;
}

void export_dataset_text(std::ostream& out, const Dataset& ds) {
    write_matrix_text(out, ds.inputs);
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        if (i) out << ' ';
        out << ds.labels[i];
    }
    out << '\n';
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const double* src = m.row(idx[i]);
        double* dst = out.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) dst[j] = src[j];
    }
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<std::size_t>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
    return out;
}

}  // namespace optshift
