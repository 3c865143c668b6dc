#pragma once

#include <stdexcept>
#include <string>

namespace nasmpc {

/// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --- model DSL ---

struct SyntaxError : Error {
    SyntaxError(const std::string& msg, int line, int column)
        : Error("syntax error at " + std::to_string(line) + ":" + std::to_string(column) + ": " + msg),
          line(line), column(column) {}
    int line;
    int column;
};

struct MandatoryStateMissing : Error {
    explicit MandatoryStateMissing(const std::string& what) : Error(what) {}
};

struct MissingDerivative : Error {
    explicit MissingDerivative(const std::string& state)
        : Error("missing derivative for state '" + state + "'"), state(state) {}
    std::string state;
};

struct DuplicateDerivative : Error {
    explicit DuplicateDerivative(const std::string& state)
        : Error("duplicate derivative for state '" + state + "'"), state(state) {}
    std::string state;
};

struct UnknownIdentifier : Error {
    explicit UnknownIdentifier(const std::string& name)
        : Error("unknown identifier '" + name + "'"), name(name) {}
    std::string name;
};

// --- dynamics ---

struct NonFiniteResult : Error {
    using Error::Error;
};

struct NonFiniteState : Error {
    using Error::Error;
};

struct NewtonDivergence : Error {
    using Error::Error;
};

// --- trajectory ---

struct BadSegmentCount : Error {
    using Error::Error;
};

struct BadPtype : Error {
    using Error::Error;
};

struct NegativeRefSpeed : Error {
    using Error::Error;
};

struct NonFiniteField : Error {
    using Error::Error;
};

// --- solver ---

struct RankDeficientActiveSet : Error {
    using Error::Error;
};

struct CholeskyBreakdown : Error {
    using Error::Error;
};

struct NoDecrease : Error {
    using Error::Error;
};

}  // namespace nasmpc
