#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace pm {

// Category drives the CLI exit code: config/validation problems exit 3,
// engine/numerics problems exit 2, checkpoint problems exit 4.
enum class ErrorCategory { Runtime = 2, Config = 3, Checkpoint = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorCategory cat, std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), cat_(cat), kind_(std::move(kind)) {}

    ErrorCategory category() const noexcept { return cat_; }
    const std::string& kind() const noexcept { return kind_; }

private:
    ErrorCategory cat_;
    std::string kind_;
};

[[noreturn]] inline void raise_config(const std::string& kind, const std::string& msg) {
    throw Error(ErrorCategory::Config, kind, msg);
}

[[noreturn]] inline void raise_runtime(const std::string& kind, const std::string& msg) {
    throw Error(ErrorCategory::Runtime, kind, msg);
}

[[noreturn]] inline void raise_checkpoint(const std::string& kind, const std::string& msg) {
    throw Error(ErrorCategory::Checkpoint, kind, msg);
}

} // namespace pm
