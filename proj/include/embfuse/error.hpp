#pragma once

#include <stdexcept>
#include <string>

namespace embfuse {

enum class ErrorCode {
    Io,
    Format,
    Corruption,
    UnsupportedDtype,
    Parse,
    Validation,
    Dimension,
    NonFinite,
    UndefinedSimilarity,
    Normalization,
    BatchSize,
    CorpusTooSmall,
    TrainingDiverged,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_{code} {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace embfuse
