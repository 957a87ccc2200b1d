#pragma once

#include <stdexcept>
#include <string>

namespace driftvq {

// Base of every error the library throws. Callers that only care about
// "something in driftvq failed" catch this.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-finite values, empty inputs, out-of-domain hyperparameters.
class InvalidInput : public Error {
public:
    using Error::Error;
};

// Dimension mismatch between two operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Problem has no solution for the requested size (e.g. N < K in k-means).
class InfeasibleError : public Error {
public:
    using Error::Error;
};

// Input is well-formed but sits on a degenerate set (duplicate points,
// zero coordinates where a sign derivative is needed).
class DegenerateInput : public Error {
public:
    using Error::Error;
};

// Object used out of sequence, e.g. a projector tape replayed after the
// parameters it was recorded against have changed.
class InvalidState : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace driftvq
