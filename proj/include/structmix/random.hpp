#pragma once

#include <cstdint>
#include <random>

#include "structmix/linalg.hpp"

namespace structmix {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent stream seed for item `index` of a run seeded with `base`.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) { return base ^ splitmix64(index); }

inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix m(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            m(r, c) = normal(rng);
        }
    }
    return m;
}

/// Random symmetric PD matrix A A^T + ridge * I.
inline Matrix random_pd(Eigen::Index n, Rng& rng, double ridge = 1.0) {
    const Matrix a = gaussian_matrix(n, n, rng);
    Matrix m = a * a.transpose();
    m.diagonal().array() += ridge;
    return linalg::symmetrized(m);
}

}  // namespace structmix
