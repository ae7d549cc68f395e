// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace nopkit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Extents, ranks or axes that do not fit together.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A caller broke an API precondition (wrong arity, non-scalar seed, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

class PlanError : public Error {
public:
    using Error::Error;
};

class SolverError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    using Error::Error;
};

class OptimizerError : public Error {
public:
    using Error::Error;
};

} // namespace nopkit
