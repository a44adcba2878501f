#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace optshift {

// Shape/precondition violations on matrix operands.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Rows expected to be independent turned out dependent.
struct RankError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A dropped row carried a non-negligible right-hand side: A*V = Z has no solution.
struct InconsistentSystemError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Cholesky hit a non-positive pivot.
struct NotPositiveDefiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
    std::size_t epoch;
    DivergenceError(const std::string& msg, std::size_t epoch_)
        : std::runtime_error(msg), epoch(epoch_) {}
};

// A report invariant that must hold by construction was violated.
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Finite-difference step produced non-finite intermediates.
struct StepSizeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed on-disk data (IDX, CIFAR binary, checkpoint, matrix text).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration file or missing/invalid key.
struct ConfigError : std::runtime_error {
    int line = -1;
    std::string key;
    explicit ConfigError(const std::string& msg, int line_ = -1, std::string key_ = "")
        : std::runtime_error(msg), line(line_), key(std::move(key_)) {}
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace optshift
