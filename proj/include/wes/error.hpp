#pragma once

#include <stdexcept>
#include <string>

namespace wes {

/// Invalid parameters or configuration; maps to CLI exit code 1.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Argument outside a function's mathematical domain (e.g. p outside (0,1)).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Runtime numeric failure such as a non-finite training loss; maps to exit code 2.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace wes
