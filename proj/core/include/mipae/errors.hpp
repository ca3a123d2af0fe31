// Copyright 2026 The MIPAE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace mipae {

// Invalid configuration values or incompatible component settings.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File system or stream failures.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A container whose bytes do not parse: truncated, bad magic, bad checksum.
class CorruptFileError : public IoError {
 public:
  using IoError::IoError;
};

class VersionError : public IoError {
 public:
  VersionError(const std::string& what, unsigned found, unsigned expected)
      : IoError(what + ": found version " + std::to_string(found) +
                ", expected version " + std::to_string(expected)),
        found_(found),
        expected_(expected) {}
  unsigned found() const { return found_; }
  unsigned expected() const { return expected_; }

 private:
  unsigned found_;
  unsigned expected_;
};

// Non-finite losses or estimates.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mipae
