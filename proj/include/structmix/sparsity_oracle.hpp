#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "structmix/linalg.hpp"
#include "structmix/model_spec.hpp"
#include "structmix/parallel.hpp"
#include "structmix/random.hpp"
#include "structmix/structured_cov.hpp"

namespace structmix {

/// Which geometric PCs (0-based) have a nonzero cross-covariance row with
/// each functional PC.
struct CouplingPattern {
    ModelSpec spec;
    std::vector<std::set<std::size_t>> gf_support;

    void validate() const {
        if (gf_support.size() != spec.kf) {
            throw DimensionError("coupling pattern needs one support set per functional PC");
        }
        for (const auto& support : gf_support) {
            if (!support.empty() && *support.rbegin() >= spec.kg) {
                throw ParameterError("coupling support index exceeds kg");
            }
        }
    }

    /// k1 ~ k2 iff some geometric PC couples with both.
    [[nodiscard]] bool equivalent(std::size_t k1, std::size_t k2) const {
        const auto& a = gf_support[k1];
        const auto& b = gf_support[k2];
        return std::any_of(a.begin(), a.end(), [&](std::size_t g) { return b.count(g) > 0; });
    }
};

/// Coupling pattern read off the nonzero rows of the cross blocks.
inline CouplingPattern coupling_of(const StructuredCovariance& sigma, const ModelSpec& spec) {
    validate_blocks(sigma, spec);
    CouplingPattern pattern{spec, std::vector<std::set<std::size_t>>(spec.kf)};
    for (std::size_t k = 0; k < spec.kf; ++k) {
        for (std::size_t g = 0; g < spec.kg; ++g) {
            if ((sigma.sigma_gf[k].row(static_cast<Eigen::Index>(g)).array() != 0.0).any()) {
                pattern.gf_support[k].insert(g);
            }
        }
    }
    return pattern;
}

/// Entries (j, i) of zeta forced to zero: j in the block of functional PC
/// k2, i in the block of k1 < k2, whenever k1 and k2 are not equivalent.
inline Mask predicted_zero_pattern(const CouplingPattern& pattern) {
    pattern.validate();
    const ModelSpec& spec = pattern.spec;
    const auto p = static_cast<Eigen::Index>(spec.p());
    const auto t = static_cast<Eigen::Index>(spec.t);
    Mask mask = Mask::Constant(p, p, false);
    for (std::size_t k2 = 0; k2 < spec.kf; ++k2) {
        for (std::size_t k1 = 0; k1 < k2; ++k1) {
            if (!pattern.equivalent(k1, k2)) {
                mask.block(static_cast<Eigen::Index>(spec.functional_column(k2, 0)),
                           static_cast<Eigen::Index>(spec.functional_column(k1, 0)), t, t)
                    .setConstant(true);
            }
        }
    }
    return mask;
}

struct Prop31Check {
    bool ok = true;
    double max_violation = 0.0;       ///< max |zeta| over forced-zero entries
    double relative_violation = 0.0;  ///< max_violation / max |zeta|
    Eigen::Index witness_row = -1;
    Eigen::Index witness_col = -1;
};

/// Factors the assembled covariance densely and checks that every entry of
/// zeta marked by predicted_zero_pattern is below tol * max|zeta|.
inline Prop31Check verify_prop31(const StructuredCovariance& sigma, const CouplingPattern& pattern, double tol = 1e-9) {
    const ModelSpec& spec = pattern.spec;
    pattern.validate();
    const CouplingPattern actual = coupling_of(sigma, spec);
    for (std::size_t k = 0; k < spec.kf; ++k) {
        for (std::size_t g : actual.gf_support[k]) {
            if (pattern.gf_support[k].count(g) == 0) {
                throw ValidityError("cross block " + std::to_string(k) + " has a nonzero row " + std::to_string(g) +
                                    " outside the declared support");
            }
        }
    }
    const Matrix zeta = dense_cholesky_precision(build_sigma(sigma, spec)).zeta();
    const Mask mask = predicted_zero_pattern(pattern);
    const double scale = linalg::max_abs(zeta);

    Prop31Check check;
    for (Eigen::Index i = 0; i < zeta.cols(); ++i) {
        for (Eigen::Index j = 0; j < zeta.rows(); ++j) {
            if (mask(j, i) && std::abs(zeta(j, i)) > check.max_violation) {
                check.max_violation = std::abs(zeta(j, i));
                check.witness_row = j;
                check.witness_col = i;
            }
        }
    }
    check.relative_violation = scale > 0.0 ? check.max_violation / scale : 0.0;
    check.ok = check.max_violation <= tol * scale;
    return check;
}

/// Random structured covariance honoring a random coupling pattern.
///
/// F blocks are A A^T + I, Sigma_GG entries are in [0.5, 2.5), cross rows on
/// the support are Gaussian and halved until the assembled matrix is PD.
/// With `disjoint`, every geometric PC couples with at most one functional
/// PC, so no two functional PCs are equivalent.
inline std::pair<StructuredCovariance, CouplingPattern> random_structured_instance(const ModelSpec& spec, Rng& rng,
                                                                                  bool disjoint = true) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, spec.kf);
    CouplingPattern pattern{spec, std::vector<std::set<std::size_t>>(spec.kf)};
    for (std::size_t g = 0; g < spec.kg; ++g) {
        if (disjoint) {
            const std::size_t k = pick(rng);
            if (k < spec.kf) {
                pattern.gf_support[k].insert(g);
            }
        } else {
            for (std::size_t k = 0; k < spec.kf; ++k) {
                if (unit(rng) < 0.5) {
                    pattern.gf_support[k].insert(g);
                }
            }
        }
    }

    const auto kg = static_cast<Eigen::Index>(spec.kg);
    const auto t = static_cast<Eigen::Index>(spec.t);
    StructuredCovariance sigma;
    sigma.sigma_gg = Vector(kg);
    for (Eigen::Index g = 0; g < kg; ++g) {
        sigma.sigma_gg(g) = 0.5 + 2.0 * unit(rng);
    }
    for (std::size_t k = 0; k < spec.kf; ++k) {
        sigma.sigma_ff.push_back(random_pd(t, rng));
        Matrix gf = Matrix::Zero(kg, t);
        for (std::size_t g : pattern.gf_support[k]) {
            gf.row(static_cast<Eigen::Index>(g)) = gaussian_matrix(1, t, rng);
        }
        sigma.sigma_gf.push_back(gf);
    }
    sigma.sigma_eps2 = unit(rng);
    while (!linalg::is_pd(assemble_sigma(sigma, spec))) {
        for (auto& gf : sigma.sigma_gf) {
            gf *= 0.5;
        }
    }
    return {sigma, pattern};
}

struct VerificationSummary {
    std::size_t instances = 0;
    std::size_t ok_count = 0;
    double worst_violation = 0.0;  ///< largest relative violation
    std::size_t worst_instance = 0;
    Eigen::Index worst_row = -1;
    Eigen::Index worst_col = -1;
};

struct VerificationOptions {
    std::size_t instances = 100;
    std::uint64_t seed = 0;
    std::size_t max_kg = 5;
    std::size_t max_kf = 5;
    std::size_t max_t = 4;
    double tol = 1e-9;
    bool disjoint = true;
    std::size_t threads = 1;
};

/// Draws random dimensions and instances (instance i seeded from
/// derive_seed(seed, i)) and runs verify_prop31 on each.
inline VerificationSummary verify_random_suite(const VerificationOptions& opts) {
    if (opts.max_kg < 1 || opts.max_kf < 1 || opts.max_t < 1) {
        throw ParameterError("maximum dimensions must be >= 1");
    }
    std::vector<Prop31Check> checks(opts.instances);
    parallel_for(opts.instances, opts.threads, [&](std::size_t i) {
        Rng rng(derive_seed(opts.seed, i));
        ModelSpec spec;
        spec.kg = std::uniform_int_distribution<std::size_t>(1, opts.max_kg)(rng);
        spec.kf = std::uniform_int_distribution<std::size_t>(1, opts.max_kf)(rng);
        spec.t = std::uniform_int_distribution<std::size_t>(1, opts.max_t)(rng);
        auto [sigma, pattern] = random_structured_instance(spec, rng, opts.disjoint);
        checks[i] = verify_prop31(sigma, pattern, opts.tol);
    });

    VerificationSummary summary;
    summary.instances = opts.instances;
    for (std::size_t i = 0; i < checks.size(); ++i) {
        summary.ok_count += checks[i].ok ? 1 : 0;
        if (checks[i].relative_violation > summary.worst_violation ||
            (summary.worst_row < 0 && checks[i].witness_row >= 0)) {
            summary.worst_violation = checks[i].relative_violation;
            summary.worst_instance = i;
            summary.worst_row = checks[i].witness_row;
            summary.worst_col = checks[i].witness_col;
        }
    }
    return summary;
}

}  // namespace structmix
