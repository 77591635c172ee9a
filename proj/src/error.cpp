#include "ser/error.hpp"

namespace ser {

const char* to_string(Errc code) {
  switch (code) {
    case Errc::Io: return "Io";
    case Errc::UnsupportedFormat: return "UnsupportedFormat";
    case Errc::CorruptHeader: return "CorruptHeader";
    case Errc::TooShort: return "TooShort";
    case Errc::BadFftSize: return "BadFftSize";
    case Errc::MissingColumn: return "MissingColumn";
    case Errc::DuplicateId: return "DuplicateId";
    case Errc::UnknownRawLabel: return "UnknownRawLabel";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::UnknownSpeaker: return "UnknownSpeaker";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::MissingUtterance: return "MissingUtterance";
    case Errc::Corrupt: return "Corrupt";
    case Errc::HashMismatch: return "HashMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::BadTarget: return "BadTarget";
    case Errc::SingleClass: return "SingleClass";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::VariantMismatch: return "VariantMismatch";
    case Errc::LabelMismatch: return "LabelMismatch";
    case Errc::FeatureKindMismatch: return "FeatureKindMismatch";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyEval: return "EmptyEval";
    case Errc::LayoutMismatch: return "LayoutMismatch";
    case Errc::Config: return "Config";
    case Errc::NumericFailure: return "NumericFailure";
  }
  return "Unknown";
}

}  // namespace ser
