#pragma once

#include <stdexcept>
#include <string>

namespace v2e {

// Invalid configuration, arguments, or input data. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A single record (file name, annotation row) could not be parsed.
class ParseError : public ConfigError {
 public:
  ParseError(const std::string& where, const std::string& what)
      : ConfigError(where + ": " + what), where_(where) {}
  const std::string& where() const { return where_; }

 private:
  std::string where_;
};

// Failure while running an otherwise valid job. Maps to CLI exit code 2.
class RuntimeFault : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace v2e
