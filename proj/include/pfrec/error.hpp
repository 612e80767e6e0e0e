// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace pfrec {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments, unknown config keys, invalid combinations.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed input files, corrupt checkpoints, protocol violations.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape mismatches detected before any arithmetic runs.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values or other numeric failures.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace pfrec
