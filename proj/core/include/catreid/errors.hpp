// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace catreid {

// User-correctable problems: bad arguments, malformed inputs, violated
// preconditions. CLI maps these to exit code 1.
class UserError : public std::runtime_error {
 public:
  explicit UserError(const std::string& msg) : std::runtime_error(msg) {}
};

// Environment problems: unreachable detector, missing weight cache,
// filesystem failures. CLI maps these to exit code 2.
class EnvError : public std::runtime_error {
 public:
  explicit EnvError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace catreid
