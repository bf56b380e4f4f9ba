#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fusionfm {

// Stable error codes. The names are part of the CLI output contract.
enum class ErrorCode {
    kConfig,
    kConfigK,
    kConfigStrategy,
    kConfigTrain,
    kConfigSplit,
    kConfigId,
    kDataMissing,
    kDataFormat,
    kDataTruncated,
    kDataInvariant,
    kManifest,
    kDataJoin,
    kSplitMissing,
    kShape,
    kNonFinite,
    kMetricUndefined,
    kCiUnavailable,
    kCompareMixed,
    kIo,
    kRuntime,
};

std::string_view code_name(ErrorCode code) noexcept;

// True for codes that describe bad input (config or data) rather than a
// failure during computation. The CLI maps these to exit code 2.
bool is_input_error(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace fusionfm
