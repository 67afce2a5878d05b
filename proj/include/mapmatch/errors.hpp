#pragma once

#include <stdexcept>
#include <string>

namespace mapmatch {

/// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Latitude/longitude outside valid ranges, or non-finite coordinates.
struct InvalidCoordinate : Error {
  using Error::Error;
};

/// A road id that is not present in the graph.
struct UnknownRoad : Error {
  using Error::Error;
};

/// Queried a matcher state that has no usable lattice.
struct EmptyLattice : Error {
  using Error::Error;
};

/// B-spline input with too few control points or a degenerate curve.
struct InvalidSpline : Error {
  using Error::Error;
};

/// Two lanes with the same id fed to enrichment.
struct DuplicateLane : Error {
  using Error::Error;
};

/// Malformed input file. Carries the 1-based line number when known.
struct ParseError : Error {
  explicit ParseError(const std::string& msg, long line_no = 0)
      : Error(line_no > 0 ? msg + " (line " + std::to_string(line_no) + ")" : msg),
        line(line_no) {}
  long line;
};

/// ICP could not keep enough correspondences to fit a transform.
struct RegistrationDegenerate : Error {
  using Error::Error;
};

/// Predicted and ground-truth sequences have different lengths.
struct LengthMismatch : Error {
  using Error::Error;
};

/// Evaluation with zero matched or zero ground-truth length.
struct DegenerateEval : Error {
  using Error::Error;
};

/// Route roads are not consecutively connected.
struct InvalidRoute : Error {
  using Error::Error;
};

/// Unknown key or out-of-range value in a configuration document.
struct InvalidConfig : Error {
  using Error::Error;
};

}  // namespace mapmatch
