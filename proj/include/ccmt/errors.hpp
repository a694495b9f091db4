#pragma once

#include <stdexcept>
#include <string>

namespace ccmt {

// Shapes of operands do not agree.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A caller broke an operation's precondition.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// A binary file is malformed (bad magic, version, truncation).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A text record could not be parsed.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Parsed input or configuration values are out of domain.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Training produced a non-finite value or another unrecoverable state.
class RuntimeFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace ccmt
