#include "bfr/error.hpp"

namespace bfr {

const char* to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_argument: return "invalid argument";
        case ErrorCode::dimension_mismatch: return "dimension mismatch";
        case ErrorCode::non_finite: return "non-finite value";
        case ErrorCode::divergence: return "divergence";
        case ErrorCode::bad_magic: return "bad magic";
        case ErrorCode::version_mismatch: return "version mismatch";
        case ErrorCode::truncated_payload: return "truncated payload";
        case ErrorCode::missing_section: return "missing section";
        case ErrorCode::wrong_magic: return "wrong magic";
        case ErrorCode::dimension_overflow: return "dimension overflow";
        case ErrorCode::io_failure: return "i/o failure";
        case ErrorCode::hash_mismatch: return "generator hash mismatch";
        case ErrorCode::kind_mismatch: return "refiner kind mismatch";
        case ErrorCode::unsupported: return "unsupported";
        case ErrorCode::config: return "config error";
        case ErrorCode::missing_artifact: return "missing artifact";
    }
    return "unknown error";
}

}  // namespace bfr
