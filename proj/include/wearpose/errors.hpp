#pragma once

#include <stdexcept>
#include <string>

namespace wearpose {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// rotation math
struct DegenerateSixD : Error { using Error::Error; };
struct GimbalDegenerate : Error { using Error::Error; };

// neural nets
struct ShapeMismatch : Error { using Error::Error; };
struct TapeMismatch : Error { using Error::Error; };

// filter
struct InvalidEnsembleSize : Error { using Error::Error; };
struct ModelShapeMismatch : Error { using Error::Error; };
struct SingularInnovation : Error { using Error::Error; };

// data / configuration
struct InvalidConfig : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct SchemaMismatch : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

// ingestion
struct NotCalibrated : Error { using Error::Error; };
struct EmptyInterval : Error { using Error::Error; };
struct BadMagic : Error { using Error::Error; };
struct UnsupportedVersion : Error { using Error::Error; };
struct BadLength : Error { using Error::Error; };
struct NonUnitQuaternion : Error { using Error::Error; };

/// True for error classes that indicate bad input data rather than a bug or
/// environment failure. The CLI maps these to exit code 2.
inline bool is_data_error(const Error& e) {
  return dynamic_cast<const SchemaMismatch*>(&e) != nullptr ||
         dynamic_cast<const ParseError*>(&e) != nullptr ||
         dynamic_cast<const EmptyDataset*>(&e) != nullptr ||
         dynamic_cast<const InvalidConfig*>(&e) != nullptr ||
         dynamic_cast<const BadMagic*>(&e) != nullptr ||
         dynamic_cast<const UnsupportedVersion*>(&e) != nullptr ||
         dynamic_cast<const BadLength*>(&e) != nullptr ||
         dynamic_cast<const NonUnitQuaternion*>(&e) != nullptr;
}

}  // namespace wearpose
