#pragma once

#include <stdexcept>
#include <string>

namespace mlpfseg {

// Bad inputs: shape mismatches, malformed files, out-of-contract arguments.
// The CLI maps this to exit code 2.
class validation_error : public std::runtime_error {
public:
    explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical integrity violations (non-finite intermediates and the like).
// The CLI maps this to exit code 3.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

// File-format problems; carries the precise expected-vs-actual diagnostic.
class io_error : public validation_error {
public:
    explicit io_error(const std::string& msg) : validation_error(msg) {}
};

}  // namespace mlpfseg
