#include "depsynth/Errors.h"

namespace depsynth {

const char* errorCategoryName(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::Config: return "config";
        case ErrorCategory::Io: return "io";
        case ErrorCategory::Parse: return "parse";
        case ErrorCategory::Schema: return "schema";
        case ErrorCategory::Graph: return "graph";
        case ErrorCategory::Network: return "network";
        case ErrorCategory::Train: return "train";
        case ErrorCategory::Model: return "model";
        case ErrorCategory::Eval: return "eval";
    }
    return "unknown";
}

}  // namespace depsynth
