#pragma once

#include <stdexcept>
#include <string>

namespace afp {

// Bad input data: malformed files, invariant violations, unsupported shapes.
// CLI exit code 2.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// The union graph of the problem is disconnected and per-component mode was
// not requested. CLI exit code 3.
struct DisconnectedGraphError : std::runtime_error {
    explicit DisconnectedGraphError(const std::string& what) : std::runtime_error(what) {}
};

// A conservation or consistency check failed inside the computation.
// CLI exit code 4.
struct InternalError : std::runtime_error {
    explicit InternalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace afp
