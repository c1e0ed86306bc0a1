#pragma once

#include <stdexcept>
#include <string>

namespace fmms {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A vector with norm below the degeneracy threshold was passed where a
// direction is required.
struct ZeroVectorError : Error {
  using Error::Error;
};

// A function evaluation produced NaN or infinity.
struct NonFiniteError : Error {
  using Error::Error;
};

struct ShapeMismatchError : Error {
  using Error::Error;
};

struct TokenOutOfRangeError : Error {
  using Error::Error;
};

struct InvalidConfigError : Error {
  using Error::Error;
};

struct InvalidScaleError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct FormatVersionMismatchError : Error {
  using Error::Error;
};

struct DivergedTrainingError : Error {
  using Error::Error;
};

struct DegenerateGalleryError : Error {
  using Error::Error;
};

struct EmptyDenominatorError : Error {
  using Error::Error;
};

// Carries the offending config key so the CLI can name it.
struct ConfigError : Error {
  std::string key;
  ConfigError(const std::string& k, const std::string& what)
      : Error(what), key(k) {}
};

}  // namespace fmms
