// Copyright 2026 The obikit Authors
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

#ifndef OBIKIT_ERROR_HPP
#define OBIKIT_ERROR_HPP

#include <stdexcept>
#include <string>

namespace obikit {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition or input-format violation (bad sizes, empty inputs, malformed files).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure on valid inputs: degenerate weights, posterior collapse, divergence.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure; the message names the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace obikit

#endif  // OBIKIT_ERROR_HPP
