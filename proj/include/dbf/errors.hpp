#pragma once

#include <stdexcept>
#include <string>

namespace dbf {

// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Tensor or mask dimensions do not satisfy an operation's contract.
class ShapeError : public Error {
public:
  using Error::Error;
};

// A scalar argument is out of its valid range.
class ParameterError : public Error {
public:
  using Error::Error;
};

// A configuration is internally inconsistent (missing heads, dataset too small, ...).
class ConfigError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

private:
  std::string path_;
};

// Checkpoint cannot be read or does not match the requested configuration.
class CheckpointError : public Error {
public:
  CheckpointError(const std::string& field, const std::string& what)
      : Error("checkpoint field '" + field + "': " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

private:
  std::string field_;
};

// Training diverged; carries the ids of the offending batch.
class TrainingError : public Error {
public:
  using Error::Error;
};

}  // namespace dbf
