#pragma once

#include <stdexcept>
#include <string>

namespace loralab {

// Shape or size mismatch between operands.
struct dim_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid user-supplied configuration (bad rate, bad JSON key, missing file).
struct config_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// API misuse: a precondition the caller controls was violated.
struct contract_error : std::logic_error {
    using std::logic_error::logic_error;
};

// Out-of-range class label or index.
struct index_error : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Runtime numerical failure: divergence, non-finite values, asymmetric Hessian.
struct numerical_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A theory probe could not establish its working assumptions.
struct probe_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem / serialization failure.
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace loralab
