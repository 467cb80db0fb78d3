#pragma once

#include <stdexcept>
#include <string>

namespace occtrack {

/// Posterior weight integrated to zero; caller decides whether to drop the component.
class ZeroSupportError : public std::runtime_error {
public:
    explicit ZeroSupportError(const std::string& what) : std::runtime_error(what) {}
};

/// Observation model cannot be inverted (singular innovation covariance etc.).
class DegenerateModelError : public std::runtime_error {
public:
    explicit DegenerateModelError(const std::string& what) : std::runtime_error(what) {}
};

/// Requested conditional has zero prior probability under the chosen occlusion mode.
class ImpossibleOutcomeError : public std::runtime_error {
public:
    explicit ImpossibleOutcomeError(const std::string& what) : std::runtime_error(what) {}
};

/// Exact association enumeration refused; problem exceeds the size guard.
class EnumerationGuardError : public std::runtime_error {
public:
    explicit EnumerationGuardError(const std::string& what) : std::runtime_error(what) {}
};

/// Two components claimed the same range return; separability assumption violated.
class SeparabilityError : public std::runtime_error {
public:
    explicit SeparabilityError(const std::string& what) : std::runtime_error(what) {}
};

/// Quantity is undefined for the given inputs (e.g. ratio with zero denominator).
class UndefinedValueError : public std::runtime_error {
public:
    explicit UndefinedValueError(const std::string& what) : std::runtime_error(what) {}
};

/// Input file could not be parsed; message carries the location.
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace occtrack
