#pragma once

#include <stdexcept>
#include <string>

namespace illiquid {

/// Input rejected before any numerical work (CLI exit status 1).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A numerical procedure failed: non-convergence, NaN, blow-up (CLI exit status 2).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace illiquid
