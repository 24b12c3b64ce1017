#pragma once

#include <stdexcept>
#include <string>

namespace twinbeam {

// Exception hierarchy mirroring the CLI exit-code contract:
// validation_error -> 2, io_error -> 3, degeneracy_error -> 4.

// Rejected inputs: out-of-range parameters, malformed artifacts,
// truncation budgets that cannot be met.
class validation_error : public std::invalid_argument {
public:
    explicit validation_error(const std::string& what)
        : std::invalid_argument(what) {}
};

// Filesystem and parse failures.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

// Numerically undefined results: zero-variance covariance, vanishing
// EM denominators, non-finite intermediates.
class degeneracy_error : public std::runtime_error {
public:
    explicit degeneracy_error(const std::string& what)
        : std::runtime_error(what) {}
};

} // namespace twinbeam
