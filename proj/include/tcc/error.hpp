#pragma once

#include <stdexcept>
#include <string>

namespace tcc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not fit the operation.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape error: " + what) {}
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error("contract error: " + what) {}
};

/// A file exists but its bytes are not a valid encoding.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error("format error: " + what) {}
};

class VersionError : public Error {
 public:
  explicit VersionError(const std::string& what) : Error("version error: " + what) {}
};

class TruncatedError : public Error {
 public:
  explicit TruncatedError(const std::string& what) : Error("truncated file: " + what) {}
};

class SizeOverflowError : public Error {
 public:
  explicit SizeOverflowError(const std::string& what) : Error("size overflow: " + what) {}
};

class MissingFileError : public Error {
 public:
  explicit MissingFileError(const std::string& path)
      : Error("missing file: " + path), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Model fitting cannot produce a meaningful model (e.g. a single class).
class DegenerateModelError : public Error {
 public:
  explicit DegenerateModelError(const std::string& what) : Error("degenerate model: " + what) {}
};

/// A quantity is mathematically undefined for the given input (e.g. R^2 of a constant target).
class UndefinedError : public Error {
 public:
  explicit UndefinedError(const std::string& what) : Error("undefined: " + what) {}
};

class MissingAnnotationError : public Error {
 public:
  explicit MissingAnnotationError(const std::string& id)
      : Error("missing annotation for sequence '" + id + "'") {}
};

}  // namespace tcc
