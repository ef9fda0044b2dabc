#include "fdg2s/error.hpp"

namespace fdg2s {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::DivisionDomain: return "DivisionDomain";
        case ErrorCode::NonScalarLoss: return "NonScalarLoss";
        case ErrorCode::TapeConsumed: return "TapeConsumed";
        case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
        case ErrorCode::IrregularStride: return "IrregularStride";
        case ErrorCode::UnknownRegion: return "UnknownRegion";
        case ErrorCode::EmptyFile: return "EmptyFile";
        case ErrorCode::MissingWeatherCoverage: return "MissingWeatherCoverage";
        case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::GapOutOfBounds: return "GapOutOfBounds";
        case ErrorCode::GapSpanViolation: return "GapSpanViolation";
        case ErrorCode::SampleNotFound: return "SampleNotFound";
        case ErrorCode::LengthMismatch: return "LengthMismatch";
        case ErrorCode::EmptyValueSet: return "EmptyValueSet";
        case ErrorCode::MissingBankEntry: return "MissingBankEntry";
        case ErrorCode::SegmentWidthMismatch: return "SegmentWidthMismatch";
        case ErrorCode::WidthMismatch: return "WidthMismatch";
        case ErrorCode::InvalidScale: return "InvalidScale";
        case ErrorCode::InsufficientSamples: return "InsufficientSamples";
        case ErrorCode::NoValidTargets: return "NoValidTargets";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::NoHistoricalMatch: return "NoHistoricalMatch";
        case ErrorCode::NegativeWidth: return "NegativeWidth";
        case ErrorCode::ConfigHashMismatch: return "ConfigHashMismatch";
        case ErrorCode::MissingExpectedFactors: return "MissingExpectedFactors";
        case ErrorCode::UsageError: return "UsageError";
    }
    return "UnknownError";
}

} // namespace fdg2s
