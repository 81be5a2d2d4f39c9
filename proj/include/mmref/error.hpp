#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmref {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not satisfy an operator's rule.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A value is NaN/Inf, or a quantity that must be nonzero is zero.
class NumericError : public Error {
public:
    using Error::Error;
};

/// An argument lies outside the operation's domain (bad id, ratio, range...).
class DomainError : public Error {
public:
    using Error::Error;
};

/// Malformed file content or configuration.
class FormatError : public Error {
public:
    using Error::Error;
};

std::string shape_string(const std::vector<std::size_t>& shape);

}  // namespace mmref
