#pragma once

#include <stdexcept>
#include <string>

namespace expanet {

// Error categories map onto CLI exit codes: config -> 2, data -> 3, numeric -> 4.
enum class ErrorCategory { config, data, numeric, logic };

class Error : public std::runtime_error {
public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), cat_(cat) {}
  ErrorCategory category() const { return cat_; }

private:
  ErrorCategory cat_;
};

#define EXPANET_DEFINE_ERROR(NAME, CAT)                       \
  class NAME : public Error {                                 \
  public:                                                     \
    explicit NAME(const std::string& msg = #NAME)             \
        : Error(ErrorCategory::CAT, std::string(#NAME) +      \
                (msg == #NAME ? "" : ": " + msg)) {}          \
  }

// eeg-io
EXPANET_DEFINE_ERROR(MissingChannel, data);
EXPANET_DEFINE_ERROR(CorruptHeader, data);
EXPANET_DEFINE_ERROR(NonFiniteSample, data);
EXPANET_DEFINE_ERROR(SampleRateTooLow, data);
EXPANET_DEFINE_ERROR(DimensionMismatch, data);
EXPANET_DEFINE_ERROR(VersionMismatch, data);
EXPANET_DEFINE_ERROR(IoFailure, data);

// dsp
EXPANET_DEFINE_ERROR(TooShortSignal, logic);
EXPANET_DEFINE_ERROR(InvalidBand, logic);
EXPANET_DEFINE_ERROR(InvalidCenter, logic);
EXPANET_DEFINE_ERROR(UnstableDesign, numeric);

// features
EXPANET_DEFINE_ERROR(ZeroVariance, numeric);
EXPANET_DEFINE_ERROR(DegenerateSignal, numeric);
EXPANET_DEFINE_ERROR(SingularFit, numeric);

// connectivity
EXPANET_DEFINE_ERROR(LengthMismatch, logic);
EXPANET_DEFINE_ERROR(InvalidK, logic);

// autodiff / model
EXPANET_DEFINE_ERROR(ShapeMismatch, logic);
EXPANET_DEFINE_ERROR(NonFinite, numeric);
EXPANET_DEFINE_ERROR(NonScalarLoss, logic);
EXPANET_DEFINE_ERROR(ConsumedTape, logic);
EXPANET_DEFINE_ERROR(IsolatedNode, data);

// trainer
EXPANET_DEFINE_ERROR(TooFewSubjects, data);
EXPANET_DEFINE_ERROR(DivergedLoss, numeric);
EXPANET_DEFINE_ERROR(DegenerateDifferences, numeric);

// explain
EXPANET_DEFINE_ERROR(EmptyGroup, data);

// cli
EXPANET_DEFINE_ERROR(StageInputMissing, data);
EXPANET_DEFINE_ERROR(ConfigInvalid, config);

#undef EXPANET_DEFINE_ERROR

// Same guard, two spec names.
using TooShort = TooShortSignal;

}  // namespace expanet
