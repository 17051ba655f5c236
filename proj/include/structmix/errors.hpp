#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace structmix {

// Base of everything the library throws. The CLI maps `kind()` to exit codes:
// input/validation problems exit 1, numerical failures exit 2.
class Error : public std::runtime_error {
public:
    enum class Kind { validation, numerical };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

// Shapes of inputs disagree with each other or with the ModelSpec.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& what) : Error(Kind::validation, "dimension error: " + what) {}
};

// Out-of-range scalar arguments (|rho| >= 1, tau_j > j-1, k too large, ...).
class ParameterError : public Error {
public:
    explicit ParameterError(const std::string& what) : Error(Kind::validation, "parameter error: " + what) {}
};

// Matrix is not symmetric / not PD / not finite where it must be.
class ValidityError : public Error {
public:
    explicit ValidityError(const std::string& what) : Error(Kind::numerical, "validity error: " + what) {}
};

// Design matrices are rank deficient, or the GLS normal matrix is singular.
class IdentifiabilityError : public Error {
public:
    explicit IdentifiabilityError(const std::string& what)
        : Error(Kind::numerical, "identifiability error: " + what) {}
};

// Residual of outcome column j (0-based) has zero norm after regression, so d_j = 0.
class DegenerateColumnError : public Error {
public:
    explicit DegenerateColumnError(std::size_t column)
        : Error(Kind::numerical, "degenerate column: residual variance of column " + std::to_string(column) +
                                     " is zero"),
          column_(column) {}

    [[nodiscard]] std::size_t column() const noexcept { return column_; }

private:
    std::size_t column_;
};

// N minus the number of nonzero coefficients of row j is not positive.
class OverfitError : public Error {
public:
    OverfitError(std::size_t column, std::size_t n, std::size_t support)
        : Error(Kind::numerical, "over-fit: row " + std::to_string(column) + " has " + std::to_string(support) +
                                     " nonzero coefficients but only " + std::to_string(n) + " observations"),
          column_(column) {}

    [[nodiscard]] std::size_t column() const noexcept { return column_; }

private:
    std::size_t column_;
};

}  // namespace structmix
