#pragma once

#include <stdexcept>
#include <string>

namespace acpf_adv {

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

class ParseError : public Error {
  public:
    ParseError(int line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const noexcept { return line_; }
    const char* kind() const noexcept override { return "parse_error"; }

  private:
    int line_;
};

class ValidationError : public Error {
  public:
    using Error::Error;
    const char* kind() const noexcept override { return "validation_error"; }
};

class DimensionError : public Error {
  public:
    using Error::Error;
    const char* kind() const noexcept override { return "dimension_error"; }
};

class NumericError : public Error {
  public:
    using Error::Error;
    const char* kind() const noexcept override { return "numeric_error"; }
};

class ConfigError : public Error {
  public:
    using Error::Error;
    const char* kind() const noexcept override { return "config_error"; }
};

}  // namespace acpf_adv
