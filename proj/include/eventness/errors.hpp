#pragma once

#include <stdexcept>
#include <string>

namespace eventness {

// Malformed or out-of-contract input data (bad file, bad annotation, shape
// mismatch). CLI maps this to exit code 2.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure (divergent training, non-finite values). CLI exit code 3.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace eventness
