// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rnda {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised when an operation receives tensors whose shapes do not fit together.
/// Carries the index of the tape node being recorded and the op name.
class ShapeError : public Error {
  public:
    ShapeError(std::size_t node, std::string op, const std::string &detail)
        : Error("shape mismatch at node " + std::to_string(node) + " (" + op + "): " + detail),
          node_(node), op_(std::move(op)) {}

    std::size_t node() const noexcept { return node_; }
    const std::string &op() const noexcept { return op_; }

  private:
    std::size_t node_;
    std::string op_;
};

/// Raised when a computation produces NaN or infinity where finite values are required.
class NumericError : public Error {
  public:
    using Error::Error;
};

/// Raised on malformed or missing files.
class IoError : public Error {
  public:
    using Error::Error;
};

} // namespace rnda
