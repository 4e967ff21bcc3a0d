// Copyright 2026 The pathflow Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PATHFLOW_ERROR_HPP
#define PATHFLOW_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

/**
 * \file
 * \brief Exception types used across the library.
 */

namespace pathflow {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration: dimension mismatches, bad hyperparameters, unknown config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An API was called in a state where it cannot produce a result (empty tape, empty batch, ...).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A point outside the support of a density was evaluated.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A non-finite intermediate was produced. Carries the index of the offending flow layer.
class NumericError : public Error {
 public:
  NumericError(std::ptrdiff_t layer, const std::string& what)
      : Error("layer " + std::to_string(layer) + ": " + what), layer_{layer} {}

  /// Layer index, or -1 when the error is not attributable to a layer.
  [[nodiscard]] std::ptrdiff_t layer() const noexcept { return layer_; }

 private:
  std::ptrdiff_t layer_;
};

/// The numeric inverse of an implicit coupling failed to bracket its root.
class InversionError : public Error {
 public:
  InversionError(std::size_t coordinate, const std::string& what)
      : Error("coordinate " + std::to_string(coordinate) + ": " + what), coordinate_{coordinate} {}

  [[nodiscard]] std::size_t coordinate() const noexcept { return coordinate_; }

 private:
  std::size_t coordinate_;
};

/// A finite-difference oracle hit a non-finite function value.
class OracleError : public Error {
 public:
  OracleError(std::size_t coordinate, const std::string& what)
      : Error("finite difference coordinate " + std::to_string(coordinate) + ": " + what),
        coordinate_{coordinate} {}

  [[nodiscard]] std::size_t coordinate() const noexcept { return coordinate_; }

 private:
  std::size_t coordinate_;
};

}  // namespace pathflow

#endif
