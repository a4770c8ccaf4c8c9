#pragma once

#include <stdexcept>
#include <string>

namespace backoff_lab {

/// Invalid input parameter (bad r, zero stations, malformed config value).
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A solver could not bracket a root inside the model's valid domain.
class ModelDomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Trace content does not support the requested computation.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Beacon sequences from different sources cannot be matched.
class AlignmentError : public DataError {
public:
    using DataError::DataError;
};

} // namespace backoff_lab
