#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace relief {

// Parameters are dense row-major doubles; row-major is the serialization
// order of every wire format and dump in this library.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Invalid scenario/task/model configuration. `key` names the offending field.
class ConfigError : public std::runtime_error {
public:
    ConfigError(std::string key, const std::string& msg)
        : std::runtime_error(key + ": " + msg), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

/// Malformed payload or aggregation input (shape mismatch, missing group).
class ProtocolError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Caller violated an operation precondition.
class ContractError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-finite value where a finite one is required.
class NumericError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline double frob_sq(const Mat& m) { return m.squaredNorm(); }

}  // namespace relief
