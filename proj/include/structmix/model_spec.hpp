#pragma once

#include <cstddef>
#include <string>

#include "structmix/errors.hpp"

namespace structmix {

/// Dimensions of the joint geometric/functional model.
///
/// Outcome columns follow one fixed index map (0-based here):
/// columns [0, kg) are the geometric PCs, and column kg + k*t + tau holds
/// functional PC k at time tau. Every matrix in the library that is indexed
/// by outcome column uses this layout.
struct ModelSpec {
    std::size_t kg = 1;  ///< geometric PCs
    std::size_t kf = 1;  ///< functional PCs
    std::size_t t = 1;   ///< time points per functional PC
    std::size_t pu = 1;  ///< time-invariant covariates
    std::size_t pw = 0;  ///< time-varying covariates
    std::size_t n = 1;   ///< subjects

    [[nodiscard]] constexpr std::size_t p() const noexcept { return kg + t * kf; }

    [[nodiscard]] constexpr std::size_t functional_column(std::size_t k, std::size_t tau) const noexcept {
        return kg + k * t + tau;
    }

    [[nodiscard]] constexpr bool is_geometric(std::size_t column) const noexcept { return column < kg; }

    /// Functional PC of a functional column.
    [[nodiscard]] constexpr std::size_t pc_of(std::size_t column) const noexcept { return (column - kg) / t; }

    /// Time index of a functional column.
    [[nodiscard]] constexpr std::size_t time_of(std::size_t column) const noexcept { return (column - kg) % t; }

    /// Length of the packed fixed-effect vector.
    [[nodiscard]] constexpr std::size_t coefficient_count() const noexcept { return kg * pu + kf * (pu + pw); }

    void validate() const {
        if (kg < 1 || kf < 1 || t < 1 || pu < 1 || n < 1) {
            throw ParameterError("ModelSpec counts kg, kf, t, pu, n must all be >= 1");
        }
    }

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

}  // namespace structmix
