#pragma once

#include <stdexcept>
#include <string>

namespace evsr {

/// Base class of every evsr exception.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// event / stream validation
struct OutOfBounds : Error { using Error::Error; };
struct BadPolarity : Error { using Error::Error; };
struct TimeExtentTooSmall : Error { using Error::Error; };
struct ZeroExtent : Error { using Error::Error; };

// resampling
struct BadFactor : Error { using Error::Error; };

// tensors / networks
struct ShapeMismatch : Error { using Error::Error; };
struct NonFiniteActivation : Error { using Error::Error; };
struct NoTrace : Error { using Error::Error; };
struct EmptyMask : Error { using Error::Error; };

// test-time training
struct GridTooSmall : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct ScaleMismatch : Error { using Error::Error; };
struct BadPosition : Error { using Error::Error; };
struct SourceMismatch : Error { using Error::Error; };
struct FieldMismatch : Error { using Error::Error; };

// metrics
struct BadBinCount : Error { using Error::Error; };
struct GeometryMismatch : Error { using Error::Error; };

// file formats
struct ParseError : Error { using Error::Error; };
struct MagicMismatch : Error { using Error::Error; };
struct TruncatedFile : Error { using Error::Error; };

/// Wraps an error thrown inside one stage of the SR pipeline, tagging it
/// with the stage name so callers can report where the run died.
struct PipelineError : Error {
    PipelineError(const std::string& stage, const std::string& what)
        : Error("[" + stage + "] " + what), stage_name(stage) {}
    std::string stage_name;
};

}  // namespace evsr
