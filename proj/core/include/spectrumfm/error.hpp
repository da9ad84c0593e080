#pragma once

#include <stdexcept>
#include <string>

namespace spectrumfm {

// Error categories. The CLI maps these onto its exit-code contract:
// ConfigError -> 2, DataError -> 3, everything else -> 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class EvalError : public Error {
public:
    using Error::Error;
};

class TrainError : public Error {
public:
    using Error::Error;
};

}  // namespace spectrumfm
