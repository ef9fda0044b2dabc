#pragma once

#include <stdexcept>
#include <string>

namespace fdg2s {

enum class ErrorCode {
    // tensor / autodiff
    ShapeMismatch,
    DivisionDomain,
    NonScalarLoss,
    TapeConsumed,
    NonFiniteEvaluation,
    // data model / ingestion
    IrregularStride,
    UnknownRegion,
    EmptyFile,
    MissingWeatherCoverage,
    IndexOutOfRange,
    InvalidConfig,
    GapOutOfBounds,
    GapSpanViolation,
    // retrieval
    SampleNotFound,
    // factor graph
    LengthMismatch,
    EmptyValueSet,
    MissingBankEntry,
    SegmentWidthMismatch,
    WidthMismatch,
    // uncertainty
    InvalidScale,
    InsufficientSamples,
    // training / evaluation
    NoValidTargets,
    NonFiniteLoss,
    NoHistoricalMatch,
    NegativeWidth,
    // cli
    ConfigHashMismatch,
    MissingExpectedFactors,
    UsageError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    const char* code_name() const noexcept { return error_code_name(code_); }

private:
    ErrorCode code_;
};

} // namespace fdg2s
