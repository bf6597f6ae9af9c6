#pragma once

#include <stdexcept>
#include <string>

namespace lpe {

// Root of every error the library throws. The CLI maps all of these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class CorruptionError : public FormatError {
public:
    using FormatError::FormatError;
};

class TrainingDivergedError : public Error {
public:
    using Error::Error;
};

}  // namespace lpe
