#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "structmix/linalg.hpp"
#include "structmix/model_spec.hpp"

namespace structmix {

/// Blocks of the structured random-effect covariance plus the error variance.
///
/// sigma_gg is the diagonal of the geometric block, sigma_ff[k] the t x t
/// temporal covariance of functional PC k, and sigma_gf[k] the kg x t cross
/// covariance between the geometric PCs and functional PC k. All blocks not
/// listed here (off-diagonal Sigma_GG, Sigma_{F_k F_k'} for k != k') are zero.
struct StructuredCovariance {
    Vector sigma_gg;
    std::vector<Matrix> sigma_ff;
    std::vector<Matrix> sigma_gf;
    double sigma_eps2 = 0.0;
};

/// Sigma^{-1} = L^T D^{-1} L with L unit lower triangular and D = diag(d).
struct CholeskyFactors {
    Matrix l;
    Vector d;

    /// zeta = I - L: row j holds the best-linear-predictor coefficients of
    /// column j on columns 0..j-1.
    [[nodiscard]] Matrix zeta() const { return Matrix::Identity(l.rows(), l.cols()) - l; }

    [[nodiscard]] Matrix precision() const { return l.transpose() * d.cwiseInverse().asDiagonal() * l; }

    [[nodiscard]] Matrix covariance() const {
        const Matrix l_inv = l.triangularView<Eigen::UnitLower>().solve(Matrix::Identity(l.rows(), l.cols()));
        Matrix sigma = l_inv * d.asDiagonal() * l_inv.transpose();
        return linalg::symmetrized(sigma);
    }
};

enum class BlockFamily { ar1 };

/// Parametric form of the functional blocks: stationary AR(1) with one
/// variance per functional PC, a shared autocorrelation and an error variance.
struct ParametricSpec {
    BlockFamily form = BlockFamily::ar1;
    Vector block_variances;
    double rho = 0.5;
    double sigma_eps2 = 0.0;
};

struct ParametricFit {
    ParametricSpec params;
    double kl = 0.0;
    bool converged = false;
    std::size_t evaluations = 0;
};

inline void validate_blocks(const StructuredCovariance& blocks, const ModelSpec& spec) {
    const auto kg = static_cast<Eigen::Index>(spec.kg);
    const auto t = static_cast<Eigen::Index>(spec.t);
    if (blocks.sigma_gg.size() != kg) {
        throw DimensionError("sigma_gg has " + std::to_string(blocks.sigma_gg.size()) + " entries, expected " +
                             std::to_string(kg));
    }
    if (blocks.sigma_ff.size() != spec.kf || blocks.sigma_gf.size() != spec.kf) {
        throw DimensionError("expected " + std::to_string(spec.kf) + " functional and cross blocks");
    }
    for (std::size_t k = 0; k < spec.kf; ++k) {
        if (blocks.sigma_ff[k].rows() != t || blocks.sigma_ff[k].cols() != t) {
            throw DimensionError("sigma_ff[" + std::to_string(k) + "] must be t x t");
        }
        if (blocks.sigma_gf[k].rows() != kg || blocks.sigma_gf[k].cols() != t) {
            throw DimensionError("sigma_gf[" + std::to_string(k) + "] must be kg x t");
        }
    }
    if (!(blocks.sigma_eps2 >= 0.0)) {
        throw ParameterError("sigma_eps2 must be nonnegative");
    }
}

/// Places the blocks into a p x p matrix without checking definiteness.
inline Matrix assemble_sigma(const StructuredCovariance& blocks, const ModelSpec& spec) {
    validate_blocks(blocks, spec);
    const auto kg = static_cast<Eigen::Index>(spec.kg);
    const auto t = static_cast<Eigen::Index>(spec.t);
    const auto p = static_cast<Eigen::Index>(spec.p());
    Matrix sigma = Matrix::Zero(p, p);
    sigma.topLeftCorner(kg, kg).diagonal() = blocks.sigma_gg;
    for (std::size_t k = 0; k < spec.kf; ++k) {
        const Eigen::Index start = kg + static_cast<Eigen::Index>(k) * t;
        sigma.block(start, start, t, t) = linalg::symmetrized(blocks.sigma_ff[k]);
        sigma.block(0, start, kg, t) = blocks.sigma_gf[k];
        sigma.block(start, 0, t, kg) = blocks.sigma_gf[k].transpose();
    }
    sigma.diagonal().array() += blocks.sigma_eps2;
    return sigma;
}

/// Total outcome covariance Sigma_gamma + sigma_eps2 * I; must be PD.
inline Matrix build_sigma(const StructuredCovariance& blocks, const ModelSpec& spec) {
    Matrix sigma = assemble_sigma(blocks, spec);
    linalg::require_pd(sigma, "assembled covariance");
    return sigma;
}

/// Stationary AR(1) covariance: entry (a, b) = variance * rho^|a-b|.
inline Matrix ar1_block(double variance, double rho, std::size_t t) {
    if (!(variance > 0.0)) {
        throw ParameterError("AR(1) variance must be positive");
    }
    if (!(std::abs(rho) < 1.0)) {
        throw ParameterError("AR(1) autocorrelation must satisfy |rho| < 1");
    }
    const auto n = static_cast<Eigen::Index>(t);
    Matrix block(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
            block(a, b) = variance * std::pow(rho, static_cast<double>(std::abs(a - b)));
        }
    }
    return block;
}

/// tr(old^{-1} new) - ln|old^{-1} new| - p, for symmetric PD arguments.
inline double kl_divergence(const Eigen::Ref<const Matrix>& sigma_new, const Eigen::Ref<const Matrix>& sigma_old) {
    if (sigma_new.rows() != sigma_old.rows() || sigma_new.cols() != sigma_old.cols()) {
        throw DimensionError("kl_divergence arguments differ in shape");
    }
    const auto llt_new = linalg::require_pd(sigma_new, "sigma_new");
    const auto llt_old = linalg::require_pd(sigma_old, "sigma_old");
    const Matrix whitened = llt_old.solve(linalg::symmetrized(sigma_new));
    const double value = whitened.trace() - (linalg::log_det(llt_new) - linalg::log_det(llt_old)) -
                         static_cast<double>(sigma_new.rows());
    return std::max(0.0, value);
}

/// Exact L, D of Sigma^{-1} = L^T D^{-1} L from a dense Cholesky of Sigma.
///
/// With Sigma = C C^T, the unit lower factor of Sigma is M = C diag(C)^{-1}
/// and D = diag(C)^2; L = M^{-1}. Used as the brute-force reference for the
/// regression estimator and for the sparsity checks.
inline CholeskyFactors dense_cholesky_precision(const Eigen::Ref<const Matrix>& sigma) {
    const auto llt = linalg::require_pd(sigma, "covariance");
    const Matrix c = llt.matrixL();
    const Vector diag = c.diagonal();
    const Matrix m = c * diag.cwiseInverse().asDiagonal();
    CholeskyFactors factors;
    factors.l = m.triangularView<Eigen::UnitLower>().solve(Matrix::Identity(m.rows(), m.cols()));
    factors.l.triangularView<Eigen::StrictlyUpper>().setZero();
    factors.l.diagonal().setOnes();
    factors.d = diag.cwiseAbs2();
    return factors;
}

/// Replaces eigenvalues below `floor` with `floor`. Matrices that already
/// satisfy the floor are returned (symmetrized) without reconstruction.
inline Matrix ensure_pd(const Eigen::Ref<const Matrix>& m, double floor) {
    if (!(floor > 0.0)) {
        throw ParameterError("eigenvalue floor must be positive");
    }
    const Matrix sym = linalg::require_symmetric(m, "matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    if (eig.info() != Eigen::Success) {
        throw ValidityError("eigendecomposition failed");
    }
    if (eig.eigenvalues().minCoeff() >= floor) {
        return sym;
    }
    const Vector clamped = eig.eigenvalues().cwiseMax(floor);
    const Matrix out = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
    return linalg::symmetrized(out);
}

/// Inverse of the floored matrix, computed from the same eigendecomposition.
inline Matrix ensure_pd_inverse(const Eigen::Ref<const Matrix>& m, double floor) {
    if (!(floor > 0.0)) {
        throw ParameterError("eigenvalue floor must be positive");
    }
    const Matrix sym = linalg::require_symmetric(m, "matrix");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(sym);
    const Vector clamped = eig.eigenvalues().cwiseMax(floor);
    const Matrix out = eig.eigenvectors() * clamped.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    return linalg::symmetrized(out);
}

namespace detail {

struct SimplexResult {
    Vector x;
    double f = std::numeric_limits<double>::infinity();
    std::size_t evaluations = 0;
    bool converged = false;
};

// Plain Nelder-Mead (reflect / expand / contract / shrink).
inline SimplexResult nelder_mead(const std::function<double(const Vector&)>& f, const Vector& start, double step,
                                 std::size_t max_evaluations) {
    const auto n = start.size();
    std::vector<Vector> vertices(static_cast<std::size_t>(n) + 1, start);
    std::vector<double> values(vertices.size());
    SimplexResult result;
    auto eval = [&](const Vector& x) {
        ++result.evaluations;
        const double v = f(x);
        return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
    };
    for (Eigen::Index i = 0; i < n; ++i) {
        vertices[static_cast<std::size_t>(i) + 1](i) += step;
    }
    for (std::size_t i = 0; i < vertices.size(); ++i) {
        values[i] = eval(vertices[i]);
    }

    std::vector<std::size_t> order(vertices.size());
    while (result.evaluations < max_evaluations) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
        const std::size_t best = order.front();
        const std::size_t worst = order.back();
        const std::size_t second_worst = order[order.size() - 2];

        double spread = 0.0;
        double size = 0.0;
        for (std::size_t i = 0; i < vertices.size(); ++i) {
            spread = std::max(spread, values[i] - values[best]);
            size = std::max(size, (vertices[i] - vertices[best]).cwiseAbs().maxCoeff());
        }
        if (std::isfinite(values[worst]) && spread <= 1e-16 + 1e-14 * std::abs(values[best]) && size <= 1e-10) {
            result.converged = true;
            break;
        }

        Vector centroid = Vector::Zero(n);
        for (std::size_t i = 0; i < vertices.size(); ++i) {
            if (i != worst) {
                centroid += vertices[i];
            }
        }
        centroid /= static_cast<double>(n);

        const Vector reflected = centroid + (centroid - vertices[worst]);
        const double f_reflected = eval(reflected);
        if (f_reflected < values[best]) {
            const Vector expanded = centroid + 2.0 * (centroid - vertices[worst]);
            const double f_expanded = eval(expanded);
            if (f_expanded < f_reflected) {
                vertices[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                vertices[worst] = reflected;
                values[worst] = f_reflected;
            }
            continue;
        }
        if (f_reflected < values[second_worst]) {
            vertices[worst] = reflected;
            values[worst] = f_reflected;
            continue;
        }
        const bool outside = f_reflected < values[worst];
        const Vector contracted = outside ? Vector(centroid + 0.5 * (reflected - centroid))
                                          : Vector(centroid + 0.5 * (vertices[worst] - centroid));
        const double f_contracted = eval(contracted);
        if (f_contracted < std::min(f_reflected, values[worst])) {
            vertices[worst] = contracted;
            values[worst] = f_contracted;
            continue;
        }
        for (std::size_t i = 0; i < vertices.size(); ++i) {
            if (i != best) {
                vertices[i] = vertices[best] + 0.5 * (vertices[i] - vertices[best]);
                values[i] = eval(vertices[i]);
            }
        }
    }
    const auto best_it = std::min_element(values.begin(), values.end());
    result.x = vertices[static_cast<std::size_t>(best_it - values.begin())];
    result.f = *best_it;
    return result;
}

// Unconstrained coordinates: log variances, atanh(rho), sqrt(sigma_eps2).
inline Vector to_unconstrained(const ParametricSpec& s) {
    const auto kf = s.block_variances.size();
    Vector x(kf + 2);
    x.head(kf) = s.block_variances.array().log().matrix();
    x(kf) = std::atanh(std::clamp(s.rho, -0.999999, 0.999999));
    x(kf + 1) = std::sqrt(std::max(0.0, s.sigma_eps2));
    return x;
}

inline ParametricSpec from_unconstrained(const Vector& x) {
    const auto kf = x.size() - 2;
    ParametricSpec s;
    s.block_variances = x.head(kf).array().exp().matrix();
    s.rho = std::tanh(x(kf));
    s.sigma_eps2 = x(kf + 1) * x(kf + 1);
    return s;
}

}  // namespace detail

/// Total covariance implied by a parametric functional model. Geometric
/// entries (the Sigma_GG diagonal and every Sigma_GF block) are taken from
/// `reference`; the functional blocks are AR(1) plus sigma_eps2 * I.
inline Matrix parametric_sigma(const ParametricSpec& params, const Eigen::Ref<const Matrix>& reference,
                               const ModelSpec& spec) {
    if (params.block_variances.size() != static_cast<Eigen::Index>(spec.kf)) {
        throw DimensionError("parametric spec needs one variance per functional PC");
    }
    const auto kg = static_cast<Eigen::Index>(spec.kg);
    const auto t = static_cast<Eigen::Index>(spec.t);
    const auto p = static_cast<Eigen::Index>(spec.p());
    Matrix sigma = Matrix::Zero(p, p);
    sigma.topLeftCorner(kg, kg).diagonal() = reference.topLeftCorner(kg, kg).diagonal();
    sigma.topRightCorner(kg, p - kg) = reference.topRightCorner(kg, p - kg);
    sigma.bottomLeftCorner(p - kg, kg) = reference.topRightCorner(kg, p - kg).transpose();
    for (std::size_t k = 0; k < spec.kf; ++k) {
        const Eigen::Index start = kg + static_cast<Eigen::Index>(k) * t;
        sigma.block(start, start, t, t) = ar1_block(params.block_variances(static_cast<Eigen::Index>(k)),
                                                    params.rho, spec.t);
        sigma.block(start, start, t, t).diagonal().array() += params.sigma_eps2;
    }
    return sigma;
}

/// Fits (block variances, rho, sigma_eps2) by minimizing
/// kl_divergence(parametric_sigma(theta), sigma_hat).
///
/// Nelder-Mead runs from `initial` and from four grid starts over rho, then
/// once more from the best point found. Infeasible parameter values (non-PD
/// model covariance) score +inf.
inline ParametricFit fit_parametric(const Eigen::Ref<const Matrix>& sigma_hat, const ParametricSpec& initial,
                                    const ModelSpec& spec, std::size_t max_evaluations = 6000) {
    const auto p = static_cast<Eigen::Index>(spec.p());
    if (sigma_hat.rows() != p || sigma_hat.cols() != p) {
        throw DimensionError("sigma_hat must be p x p");
    }
    const auto llt_hat = linalg::require_pd(sigma_hat, "sigma_hat");
    const double log_det_hat = linalg::log_det(llt_hat);

    auto objective = [&](const ParametricSpec& params) {
        if (!(std::abs(params.rho) < 1.0) || !(params.block_variances.array() > 0.0).all()) {
            return std::numeric_limits<double>::infinity();
        }
        const Matrix model = parametric_sigma(params, sigma_hat, spec);
        Eigen::LLT<Matrix> llt(model);
        if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all()) {
            return std::numeric_limits<double>::infinity();
        }
        const double value = llt_hat.solve(model).trace() - (linalg::log_det(llt) - log_det_hat) -
                             static_cast<double>(p);
        return std::max(0.0, value);
    };
    auto objective_x = [&](const Vector& x) { return objective(detail::from_unconstrained(x)); };

    std::vector<ParametricSpec> starts{initial};
    const auto kg = static_cast<Eigen::Index>(spec.kg);
    const auto t = static_cast<Eigen::Index>(spec.t);
    Vector block_means(static_cast<Eigen::Index>(spec.kf));
    for (std::size_t k = 0; k < spec.kf; ++k) {
        block_means(static_cast<Eigen::Index>(k)) =
            sigma_hat.diagonal().segment(kg + static_cast<Eigen::Index>(k) * t, t).mean();
    }
    for (double rho : {-0.5, 0.0, 0.5, 0.9}) {
        ParametricSpec s;
        s.rho = rho;
        s.block_variances = (0.9 * block_means).cwiseMax(1e-8);
        s.sigma_eps2 = 0.1 * block_means.minCoeff();
        starts.push_back(s);
    }

    ParametricFit best;
    best.kl = std::numeric_limits<double>::infinity();
    best.params = initial;
    const double initial_kl = objective(initial);
    for (const auto& s : starts) {
        const Vector x0 = detail::to_unconstrained(s);
        if (!std::isfinite(objective_x(x0))) {
            continue;
        }
        const auto run = detail::nelder_mead(objective_x, x0, 0.5, max_evaluations);
        best.evaluations += run.evaluations;
        if (run.f < best.kl) {
            best.kl = run.f;
            best.params = detail::from_unconstrained(run.x);
            best.converged = run.converged;
        }
    }
    if (!std::isfinite(best.kl)) {
        throw ValidityError("no feasible starting point for the parametric fit");
    }
    const auto polish = detail::nelder_mead(objective_x, detail::to_unconstrained(best.params), 0.05, max_evaluations);
    best.evaluations += polish.evaluations;
    if (polish.f <= best.kl) {
        best.kl = polish.f;
        best.params = detail::from_unconstrained(polish.x);
        best.converged = polish.converged;
    }
    // Starting at the optimum: keep the initial point exactly.
    if (initial_kl <= best.kl) {
        best.kl = initial_kl;
        best.params = initial;
        best.converged = true;
    }
    best.params.form = initial.form;
    return best;
}

}  // namespace structmix
