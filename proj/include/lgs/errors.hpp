#pragma once

#include <stdexcept>
#include <string>

namespace lgs {

// Root of every error the library throws. Subclasses map onto the CLI exit
// codes in tools/lgseg.cpp.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class IndexError : public Error {
public:
    using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class InputError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Malformed bytes in a file we parse (PGM, checkpoint, manifest).
class FormatError : public Error {
public:
    using Error::Error;
};

class VersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class CorruptionError : public FormatError {
public:
    using FormatError::FormatError;
};

}  // namespace lgs
