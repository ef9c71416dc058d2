#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace vpetabc {

/// Base class for every error thrown by the library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent configuration (schema, ranges, n > N, ...).
class config_error : public error {
public:
    using error::error;
};

/// Input data that does not satisfy a precondition (dimensions, coverage, NaNs).
class data_error : public error {
public:
    using error::error;
};

/// Gamma-variate shape outside its domain (tP <= tD or alpha <= 0).
class shape_error : public data_error {
public:
    using data_error::data_error;
};

/// The requested run does not fit the configured memory budget.
class budget_error : public error {
public:
    budget_error(const std::string& what, std::uint64_t feasible_batch)
        : error(what), feasible_batch_(feasible_batch) {}

    /// Largest batch_rows that fits the budget; 0 when even one row does not.
    std::uint64_t feasible_batch() const noexcept { return feasible_batch_; }

private:
    std::uint64_t feasible_batch_;
};

} // namespace vpetabc
