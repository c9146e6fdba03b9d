#pragma once

#include <stdexcept>
#include <string>

namespace mvr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A value fell outside its documented domain (e.g. elevation beyond +-90 deg).
class RangeError : public Error {
public:
    using Error::Error;
};

class DegenerateRaysError : public Error {
public:
    using Error::Error;
};

class InsufficientMatchesError : public Error {
public:
    using Error::Error;
};

class NoTripletsError : public Error {
public:
    using Error::Error;
};

class EstimationFailedError : public Error {
public:
    using Error::Error;
};

class EmptySceneError : public Error {
public:
    using Error::Error;
};

class EmptyMeshError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
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

}  // namespace mvr
