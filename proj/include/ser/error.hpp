#pragma once

#include <stdexcept>
#include <string>

namespace ser {

enum class Errc {
  Io,
  UnsupportedFormat,
  CorruptHeader,
  TooShort,
  BadFftSize,
  MissingColumn,
  DuplicateId,
  UnknownRawLabel,
  EmptySplit,
  UnknownSpeaker,
  VersionMismatch,
  MissingUtterance,
  Corrupt,
  HashMismatch,
  ShapeMismatch,
  BadTarget,
  SingleClass,
  DimensionMismatch,
  NoConvergence,
  VariantMismatch,
  LabelMismatch,
  FeatureKindMismatch,
  LengthMismatch,
  EmptyEval,
  LayoutMismatch,
  Config,
  NumericFailure,
};

const char* to_string(Errc code);

// Every failure in the library is reported as an Error carrying a code, so the
// CLI can map it onto an exit status and a machine-readable record.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace ser
