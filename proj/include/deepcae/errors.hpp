#pragma once

#include <stdexcept>
#include <string>

namespace deepcae {

// Exception hierarchy. The CLI maps each family onto a process exit code.

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or schema (bad overrides, duplicate columns, ...).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergedError : public NumericError {
public:
    DivergedError(std::size_t epoch, double weighted_penalty, const std::string& detail)
        : NumericError("training diverged at epoch " + std::to_string(epoch) +
                       " (lambda*penalty = " + std::to_string(weighted_penalty) + "): " + detail),
          epoch_(epoch),
          weighted_penalty_(weighted_penalty) {}

    std::size_t epoch() const noexcept { return epoch_; }
    double weighted_penalty() const noexcept { return weighted_penalty_; }

private:
    std::size_t epoch_;
    double weighted_penalty_;
};

/// An analytic result disagreed with its independent oracle.
class OracleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace deepcae
