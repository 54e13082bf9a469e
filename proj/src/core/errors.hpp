#pragma once

#include <stdexcept>
#include <string>

namespace altfl {

// Invalid argument supplied by the caller (bad shape, out-of-range value, ...).
struct invalid_argument_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed configuration or file contents.
struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem problems (missing file, unwritable archive, ...).
struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Numerical failure during training or attack optimisation (NaN/Inf).
struct diverged_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace altfl
