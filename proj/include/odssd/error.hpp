#pragma once

#include <stdexcept>
#include <string>

namespace odssd {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite, out-of-range or otherwise unusable argument values.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Tensor or model shape disagreement.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Annotation document that violates the stereo VOC schema. `element()`
/// names the offending XML element.
class SchemaError : public Error {
 public:
  SchemaError(std::string element, const std::string& what)
      : Error(element + ": " + what), element_(std::move(element)) {}

  const std::string& element() const noexcept { return element_; }

 private:
  std::string element_;
};

/// Undecodable file content (image codecs, weights blobs, record files).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Filesystem level failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace odssd
