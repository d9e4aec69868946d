#pragma once

#include <stdexcept>
#include <string>

namespace denomae {

// CLI exit code categories. Library code throws the typed errors below and
// the CLI maps them onto these codes.
enum class ExitCode : int {
    ok = 0,
    config = 2,
    data = 3,
    numeric = 4,
    io = 5,
};

// Invalid configuration, bad flag values, shape mismatches caused by config.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (manifests, tensor files, labels).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values or other numeric contract violations.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem failures: unreadable/unwritable paths, refusing to clobber.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline ExitCode exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return ExitCode::config;
    if (dynamic_cast<const DataError*>(&e)) return ExitCode::data;
    if (dynamic_cast<const NumericError*>(&e)) return ExitCode::numeric;
    if (dynamic_cast<const IoError*>(&e)) return ExitCode::io;
    return ExitCode::config;
}

}  // namespace denomae
