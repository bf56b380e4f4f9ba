#include "fusionfm/error.hpp"

namespace fusionfm {

std::string_view code_name(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::kConfig: return "E_CONFIG";
        case ErrorCode::kConfigK: return "E_CONFIG_K";
        case ErrorCode::kConfigStrategy: return "E_CONFIG_STRATEGY";
        case ErrorCode::kConfigTrain: return "E_CONFIG_TRAIN";
        case ErrorCode::kConfigSplit: return "E_CONFIG_SPLIT";
        case ErrorCode::kConfigId: return "E_CONFIG_ID";
        case ErrorCode::kDataMissing: return "E_DATA_MISSING";
        case ErrorCode::kDataFormat: return "E_DATA_FORMAT";
        case ErrorCode::kDataTruncated: return "E_DATA_TRUNCATED";
        case ErrorCode::kDataInvariant: return "E_DATA_INVARIANT";
        case ErrorCode::kManifest: return "E_MANIFEST";
        case ErrorCode::kDataJoin: return "E_DATA_JOIN";
        case ErrorCode::kSplitMissing: return "E_SPLIT_MISSING";
        case ErrorCode::kShape: return "E_SHAPE";
        case ErrorCode::kNonFinite: return "E_NONFINITE";
        case ErrorCode::kMetricUndefined: return "E_METRIC_UNDEFINED";
        case ErrorCode::kCiUnavailable: return "E_CI_UNAVAILABLE";
        case ErrorCode::kCompareMixed: return "E_COMPARE_MIXED";
        case ErrorCode::kIo: return "E_IO";
        case ErrorCode::kRuntime: return "E_RUNTIME";
    }
    return "E_UNKNOWN";
}

bool is_input_error(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::kShape:
        case ErrorCode::kNonFinite:
        case ErrorCode::kMetricUndefined:
        case ErrorCode::kCiUnavailable:
        case ErrorCode::kIo:
        case ErrorCode::kRuntime:
            return false;
        default:
            return true;
    }
}

}  // namespace fusionfm
