#pragma once

#include <stdexcept>
#include <string>

namespace nptax {

// Base for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (files, records, queries).
class DataError : public Error {
  public:
    using Error::Error;
};

// Model file that cannot be read back (truncated, corrupted, wrong version).
class ModelFormatError : public DataError {
  public:
    using DataError::DataError;
};

// Parameters outside their admissible domain, or a numerical failure.
class NumericError : public Error {
  public:
    using Error::Error;
};

}  // namespace nptax
