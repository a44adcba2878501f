#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "optshift/matrix.hpp"

namespace optshift {

// Normalized feature matrix plus labels. feature_mean/std are the statistics
// used for normalization, so inputs can be denormalized exactly.
struct Dataset {
    Matrix inputs;  // samples x features
    std::vector<int> labels;
    std::size_t class_count = 0;
    std::string split;  // "train" or "test"
    std::vector<double> feature_mean;
    std::vector<double> feature_std;

    std::size_t size() const { return inputs.rows(); }
    std::size_t features() const { return inputs.cols(); }
};

// Seeded Gaussian-blob classification problem: class means on a sphere of
// radius mean_scale, isotropic noise sigma around each mean.
struct BlobSpec {
    std::size_t classes = 10;
    std::size_t dim = 64;
    double mean_scale = 4.0;
    double noise = 1.0;
    std::size_t train_size = 5000;
    std::size_t test_size = 1000;
    std::uint64_t seed = 0;
};

std::pair<Dataset, Dataset> generate_blobs(const BlobSpec& spec);

// IDX-format reader (big-endian, magic 0x00000803 images / 0x00000801
// labels). Pixels scaled to [0,1] and normalized by the train split's scalar
// mean/std.
std::pair<Dataset, Dataset> load_mnist(const std::string& dir);

// CIFAR-10 binary batches (1 label byte + 3072 channel-planar pixel bytes per
// record), flattened and normalized per channel with mean (0.4914, 0.4822,
// 0.4465) and std (0.2023, 0.1994, 0.2010).
std::pair<Dataset, Dataset> load_cifar10(const std::string& dir);

// Original (pre-normalization) inputs, reconstructed from the recorded stats.
Matrix denormalized_inputs(const Dataset& ds);

// Matrix text format followed by one line of space-separated labels.
void export_dataset_text(std::ostream& out, const Dataset& ds);

// Row subsets sharing the parent's normalization stats.
Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& idx);
std::vector<int> gather_labels(const std::vector<int>& labels, const std::vector<std::size_t>& idx);

}  // namespace optshift
