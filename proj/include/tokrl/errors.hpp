#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tokrl {

using TokenId = std::uint32_t;

// Bad configuration values (discounts out of range, indivisible batch sizes, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unknown keys or malformed command lines; the message lists what is valid.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class EpisodeOverError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IllegalActionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The sampler reached max_action_len without producing a complete action.
class TruncatedActionError : public std::runtime_error {
 public:
  TruncatedActionError(const std::string& what, std::vector<TokenId> partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const std::vector<TokenId>& partial() const noexcept { return partial_; }

 private:
  std::vector<TokenId> partial_;
};

// KL[p || q] with q(w) == 0 < p(w).
class DivergenceUndefinedError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class TooLargeError : public std::length_error {
 public:
  using std::length_error::length_error;
};

class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& residual_trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

class ModelMismatchError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite gradient or loss. `index` is the first offending parameter, or
// npos when the failure is a loss value.
class NumericalError : public std::runtime_error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  NumericalError(const std::string& what, std::size_t index = npos)
      : std::runtime_error(what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

}  // namespace tokrl
