#pragma once

#include <stdexcept>
#include <string>

namespace msef {

// Shape/dimension contract violations (matmul extents, head splits, ...).
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf detected where the contract requires finite values.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Record-level validation failures (missing field, out-of-range score, ...).
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad user-supplied input that is not a per-record validation issue.
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

}  // namespace msef
