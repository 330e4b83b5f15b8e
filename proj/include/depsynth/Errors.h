#pragma once

#include <stdexcept>
#include <string>

namespace depsynth {

// Machine-readable failure categories. The CLI echoes the category string in its
// JSON error log and maps any thrown DepsynthError to a nonzero exit code.
enum class ErrorCategory {
    Config,
    Io,
    Parse,
    Schema,
    Graph,
    Network,
    Train,
    Model,
    Eval,
};

const char* errorCategoryName(ErrorCategory category);

class DepsynthError : public std::runtime_error {
public:
    DepsynthError(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const { return category_; }

private:
    ErrorCategory category_;
};

[[noreturn]] inline void raise(ErrorCategory category, const std::string& message) {
    throw DepsynthError(category, message);
}

}  // namespace depsynth
