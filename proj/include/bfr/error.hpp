#pragma once

#include <stdexcept>
#include <string>

namespace bfr {

enum class ErrorCode {
    invalid_argument,
    dimension_mismatch,
    non_finite,
    divergence,
    bad_magic,
    version_mismatch,
    truncated_payload,
    missing_section,
    wrong_magic,
    dimension_overflow,
    io_failure,
    hash_mismatch,
    kind_mismatch,
    unsupported,
    config,
    missing_artifact,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

// Raised mid-integration when the state leaves the finite range.
class IntegrationError : public Error {
public:
    IntegrationError(int step, const std::string& what)
        : Error(ErrorCode::non_finite, what + " at step " + std::to_string(step)), step_(step) {}

    int step() const noexcept { return step_; }

private:
    int step_;
};

// Raised by training loops when the loss stops being finite.
class DivergenceError : public Error {
public:
    explicit DivergenceError(long step)
        : Error(ErrorCode::divergence, "loss became non-finite at step " + std::to_string(step)),
          step_(step) {}

    long step() const noexcept { return step_; }

private:
    long step_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
    if (!cond) throw Error(code, what);
}

}  // namespace bfr
