// Copyright 2026 The dnseg Authors.
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

#pragma once

#include <stdexcept>
#include <string>

namespace dnseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument or tensor-shape contract violated by the caller.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (non-positive rates, bad variant names, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Problems reading or writing persisted artifacts.
class FormatError : public Error {
 public:
  enum class Kind {
    kIo,
    kBadMagic,
    kVersionMismatch,
    kTruncated,
    kChecksum,
    kMissingFile,
    kShapeMismatch,
    kVariantMismatch,
    kMalformed,
  };

  FormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Non-finite values or failed numerical checks.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Internal invariant violation; prints and aborts.
[[noreturn]] void invariant_failure(const char* expr, const char* file, int line);

}  // namespace dnseg

#define DNSEG_INVARIANT(expr) \
  ((expr) ? static_cast<void>(0) : ::dnseg::invariant_failure(#expr, __FILE__, __LINE__))
