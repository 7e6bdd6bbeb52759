#pragma once

#include <stdexcept>
#include <string>

namespace posbench {

// Bad input: malformed files, violated preconditions, inconsistent configs.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failure talking to a remote backend.
class TransportError : public std::runtime_error {
 public:
  TransportError(const std::string& endpoint, std::size_t batch_index, const std::string& what)
      : std::runtime_error(endpoint + " (batch " + std::to_string(batch_index) + "): " + what),
        endpoint_(endpoint),
        batch_index_(batch_index) {}

  const std::string& endpoint() const noexcept { return endpoint_; }
  std::size_t batch_index() const noexcept { return batch_index_; }

 private:
  std::string endpoint_;
  std::size_t batch_index_;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace posbench
