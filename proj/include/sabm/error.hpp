#pragma once

#include <stdexcept>
#include <string>

namespace sabm {

// Root of every error the engine throws on purpose. Callers that only care
// about "did the run abort" catch this.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ProviderError : public Error {
 public:
  using Error::Error;
};

class TransportError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class AuthError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class BudgetExceeded : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class CacheMiss : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class UnknownScenarioTag : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class MissingBinding : public Error {
 public:
  explicit MissingBinding(const std::string& name)
      : Error("missing binding for placeholder '" + name + "'"), name_(name) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class UnknownPlaceholder : public Error {
 public:
  explicit UnknownPlaceholder(const std::string& name)
      : Error("undeclared placeholder '" + name + "'"), name_(name) {}
  const std::string& name() const { return name_; }

 private:
  std::string name_;
};

class UnknownVariant : public Error {
 public:
  using Error::Error;
};

class EmptySample : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class UnknownSeries : public Error {
 public:
  using Error::Error;
};

class SerializationError : public Error {
 public:
  using Error::Error;
};

class VersionMismatch : public SerializationError {
 public:
  using SerializationError::SerializationError;
};

class CapacityExceeded : public Error {
 public:
  using Error::Error;
};

class SingularParameters : public Error {
 public:
  using Error::Error;
};

class MalformedTable : public Error {
 public:
  using Error::Error;
};

class KeyMismatch : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sabm
