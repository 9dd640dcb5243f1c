#pragma once

#include <stdexcept>
#include <string>

namespace lexgen {

// Error categories map 1:1 onto CLI exit codes (see tools/main.cpp).
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Constraint cannot be satisfied within the generation horizon.
struct InfeasibleError : std::runtime_error {
    explicit InfeasibleError(const std::string& msg) : std::runtime_error(msg) {}
};

// Broken invariant inside the engine; always a bug.
struct InternalError : std::logic_error {
    explicit InternalError(const std::string& msg) : std::logic_error(msg) {}
};

// An external data source (child process, teacher model) failed mid-operation.
struct SourceError : std::runtime_error {
    explicit SourceError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace lexgen
