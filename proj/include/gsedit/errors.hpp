#pragma once

#include <stdexcept>
#include <string>

namespace gsedit {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

/// A Gaussian whose smallest scale is below the covariance floor.
class DegenerateCovarianceError : public Error {
public:
    using Error::Error;
};

class InvalidArgumentError : public Error {
public:
    using Error::Error;
};

// Scene / checkpoint file errors.
class FormatError : public Error {
public:
    using Error::Error;
};
class MalformedHeaderError : public FormatError {
public:
    using FormatError::FormatError;
};
class TruncatedPayloadError : public FormatError {
public:
    using FormatError::FormatError;
};
class UnsupportedVersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// An injected image editor failed or returned an invalid image.
class EditorError : public Error {
public:
    using Error::Error;
};

/// Optimization diverged (non-finite loss).
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace gsedit
