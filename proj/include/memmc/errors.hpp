#pragma once

#include <stdexcept>
#include <string>

namespace memmc {

/// Dimension or layout mismatch between tensors.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Argument outside its valid range (ratios, widths, thresholds, ...).
struct ValueError : std::invalid_argument {
    explicit ValueError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// NaN or Inf encountered in an activation or input.
struct NonFiniteError : std::runtime_error {
    explicit NonFiniteError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Checkpoint file carries an unsupported format version.
struct CheckpointVersionError : std::runtime_error {
    explicit CheckpointVersionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Checkpoint file is truncated or otherwise unreadable.
struct CheckpointCorruptError : std::runtime_error {
    explicit CheckpointCorruptError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dataset/manifest problems: missing files, bad labels, size mismatches.
struct DatasetError : std::runtime_error {
    explicit DatasetError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace memmc
