#include "embfuse/error.hpp"

namespace embfuse {

const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::Io: return "io";
    case ErrorCode::Format: return "format";
    case ErrorCode::Corruption: return "corruption";
    case ErrorCode::UnsupportedDtype: return "unsupported-dtype";
    case ErrorCode::Parse: return "parse";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::Dimension: return "dimension";
    case ErrorCode::NonFinite: return "non-finite";
    case ErrorCode::UndefinedSimilarity: return "undefined-similarity";
    case ErrorCode::Normalization: return "normalization";
    case ErrorCode::BatchSize: return "batch-size";
    case ErrorCode::CorpusTooSmall: return "corpus-too-small";
    case ErrorCode::TrainingDiverged: return "training-diverged";
    }
    return "unknown";
}

}  // namespace embfuse
