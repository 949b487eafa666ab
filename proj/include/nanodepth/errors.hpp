#pragma once

#include <stdexcept>
#include <string>

namespace nanodepth {

/// Tensor shapes or vector lengths that do not fit an operation.
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// A network configuration or graph that fails structural validation.
/// `node()` names the offending node when one is known.
class ValidationError : public std::invalid_argument {
 public:
  ValidationError(std::string node, const std::string& what)
      : std::invalid_argument(node.empty() ? what : node + ": " + what), node_(std::move(node)) {}

  const std::string& node() const noexcept { return node_; }

 private:
  std::string node_;
};

/// Malformed or truncated file contents.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Arguments outside an operation's domain (non-positive NetScore inputs and the like).
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nanodepth
