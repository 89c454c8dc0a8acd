#pragma once

#include <stdexcept>
#include <string>

namespace autoclip {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NormalizationError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct ScoreError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct ManifestError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace autoclip
