#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "structmix/linalg.hpp"
#include "structmix/model_spec.hpp"
#include "structmix/parallel.hpp"
#include "structmix/structured_cov.hpp"

namespace structmix {

// Column indices in this header are 0-based: column j is regressed on
// columns 0..j-1, so row j has j candidate predictors.

/// N x p matrix of estimated combined random effects, one row per subject.
struct ResidualMatrix {
    Matrix values;

    [[nodiscard]] Eigen::Index subjects() const { return values.rows(); }
    [[nodiscard]] Eigen::Index columns() const { return values.cols(); }
};

enum class PenaltyMode { target_sparsity, fixed_lambda, cross_validation };

/// How the per-row Lasso penalty is chosen.
///
/// target_sparsity: per-row nonzero budget tau (defaults to default_tau);
/// fixed_lambda: per-row lambda (a single value is broadcast to all rows);
/// cross_validation: k-fold CV over a logarithmic lambda grid.
/// In target_sparsity and cross_validation modes geometric rows are solved by
/// unpenalized least squares.
struct PenaltyPolicy {
    PenaltyMode mode = PenaltyMode::target_sparsity;
    std::optional<std::vector<std::size_t>> tau;
    std::optional<Vector> lambda;
    std::size_t cv_folds = 5;

    static PenaltyPolicy target_sparsity() { return {}; }
    static PenaltyPolicy target_sparsity(std::vector<std::size_t> budgets) {
        PenaltyPolicy p;
        p.tau = std::move(budgets);
        return p;
    }
    static PenaltyPolicy fixed_lambda(double value) {
        PenaltyPolicy p;
        p.mode = PenaltyMode::fixed_lambda;
        p.lambda = Vector::Constant(1, value);
        return p;
    }
    static PenaltyPolicy fixed_lambda(Vector values) {
        PenaltyPolicy p;
        p.mode = PenaltyMode::fixed_lambda;
        p.lambda = std::move(values);
        return p;
    }
    static PenaltyPolicy cross_validation(std::size_t folds = 5) {
        PenaltyPolicy p;
        p.mode = PenaltyMode::cross_validation;
        p.cv_folds = folds;
        return p;
    }

    void validate(std::size_t p) const {
        switch (mode) {
            case PenaltyMode::target_sparsity:
                if (lambda) {
                    throw ParameterError("target_sparsity policy does not take lambda");
                }
                if (tau) {
                    if (tau->size() != p) {
                        throw ParameterError("tau must have one entry per outcome column");
                    }
                    for (std::size_t j = 0; j < p; ++j) {
                        if ((*tau)[j] > j) {
                            throw ParameterError("tau for column " + std::to_string(j) + " exceeds its " +
                                                 std::to_string(j) + " predictors");
                        }
                    }
                }
                break;
            case PenaltyMode::fixed_lambda:
                if (tau) {
                    throw ParameterError("fixed_lambda policy does not take tau");
                }
                if (!lambda || (lambda->size() != 1 && lambda->size() != static_cast<Eigen::Index>(p))) {
                    throw ParameterError("fixed_lambda policy needs one lambda or one per outcome column");
                }
                if (!(lambda->array() >= 0.0).all()) {
                    throw ParameterError("lambda must be nonnegative");
                }
                break;
            case PenaltyMode::cross_validation:
                if (tau || lambda) {
                    throw ParameterError("cross_validation policy takes neither tau nor lambda");
                }
                if (cv_folds < 2) {
                    throw ParameterError("cross_validation needs at least 2 folds");
                }
                break;
        }
    }
};

struct LassoResult {
    Vector coefficients;
    bool converged = true;
    std::size_t sweeps = 0;
};

struct TargetResult {
    double lambda = 0.0;
    Vector coefficients;
    std::size_t nonzeros = 0;
};

/// One solved row of the precision factorization.
struct RowFit {
    Vector coefficients;  ///< zeta_{j, 0..j-1}
    double lambda = 0.0;  ///< 0 for unpenalized rows
    double rss = 0.0;
    std::size_t nonzeros = 0;
    bool converged = true;
};

struct CholeskyEstimate {
    CholeskyFactors factors;
    Matrix sigma_hat;
    Matrix sigma_inv_hat;
    std::vector<std::vector<std::size_t>> support;
    Vector lambdas;
    bool converged = true;
};

inline constexpr double kLassoTolerance = 1e-8;
inline constexpr std::size_t kLassoMaxSweeps = 10000;
inline constexpr int kBisectionSteps = 60;
inline constexpr std::size_t kCvGridSize = 50;

namespace detail {

inline double soft_threshold(double z, double threshold) {
    if (z > threshold) {
        return z - threshold;
    }
    if (z < -threshold) {
        return z + threshold;
    }
    return 0.0;
}

inline std::size_t count_nonzeros(const Vector& v) { return static_cast<std::size_t>((v.array() != 0.0).count()); }

// Cyclic coordinate descent for ||y - X b||^2 + lambda ||b||_1 given the
// Gram matrix of [X, y]: x_k'x_l = gram(k, l), x_k'y = gram(k, j), over the
// first j columns. `coef` is a warm start and receives the solution.
inline LassoResult lasso_gram(const Matrix& gram, Eigen::Index j, double lambda, Vector coef) {
    LassoResult result;
    if (coef.size() != j) {
        coef = Vector::Zero(j);
    }
    // gradient g = X'y - X'X b, maintained incrementally
    Vector g = gram.col(j).head(j) - gram.topLeftCorner(j, j) * coef;
    const double half = 0.5 * lambda;
    result.converged = false;
    while (result.sweeps < kLassoMaxSweeps) {
        ++result.sweeps;
        double max_delta = 0.0;
        for (Eigen::Index k = 0; k < j; ++k) {
            const double norm2 = gram(k, k);
            const double old = coef(k);
            const double updated = norm2 > 0.0 ? soft_threshold(g(k) + norm2 * old, half) / norm2 : 0.0;
            const double delta = updated - old;
            if (delta != 0.0) {
                coef(k) = updated;
                g -= delta * gram.col(k).head(j);
                max_delta = std::max(max_delta, std::abs(delta));
            }
        }
        if (max_delta < kLassoTolerance) {
            result.converged = true;
            break;
        }
    }
    result.coefficients = std::move(coef);
    return result;
}

inline double lambda_max_gram(const Matrix& gram, Eigen::Index j) {
    return j == 0 ? 0.0 : 2.0 * gram.col(j).head(j).cwiseAbs().maxCoeff();
}

// Minimum-norm least squares of column j on columns 0..j-1.
inline Vector ols_row(const Matrix& data, Eigen::Index j) {
    if (j == 0) {
        return Vector(0);
    }
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(data.leftCols(j));
    return cod.solve(data.col(j));
}

inline double row_rss(const Matrix& data, Eigen::Index j, const Vector& coef) {
    Vector r = data.col(j);
    for (Eigen::Index k = 0; k < j; ++k) {
        if (coef(k) != 0.0) {
            r -= coef(k) * data.col(k);
        }
    }
    return r.squaredNorm();
}

inline TargetResult lambda_for_target_gram(const Matrix& data, const Matrix& gram, Eigen::Index j, std::size_t tau) {
    if (tau > static_cast<std::size_t>(j)) {
        throw ParameterError("tau " + std::to_string(tau) + " exceeds the " + std::to_string(j) +
                             " predictors of column " + std::to_string(j));
    }
    TargetResult result;
    const Vector ols = ols_row(data, j);
    if (count_nonzeros(ols) <= tau) {
        result.coefficients = ols;
        result.nonzeros = count_nonzeros(ols);
        return result;
    }
    double lo = 0.0;
    double hi = lambda_max_gram(gram, j) * (1.0 + 1e-6);
    Vector hi_coef = Vector::Zero(j);
    Vector warm = Vector::Zero(j);
    for (int step = 0; step < kBisectionSteps; ++step) {
        const double mid = 0.5 * (lo + hi);
        if (!(mid > lo && mid < hi)) {
            break;
        }
        auto fit = lasso_gram(gram, j, mid, warm);
        warm = fit.coefficients;
        if (count_nonzeros(fit.coefficients) <= tau) {
            hi = mid;
            hi_coef = std::move(fit.coefficients);
        } else {
            lo = mid;
        }
    }
    result.lambda = hi;
    result.nonzeros = count_nonzeros(hi_coef);
    result.coefficients = std::move(hi_coef);
    return result;
}

inline Matrix gram_of(const Matrix& data) {
    Matrix gram = Matrix::Zero(data.cols(), data.cols());
    gram.selfadjointView<Eigen::Lower>().rankUpdate(data.transpose());
    return gram.selfadjointView<Eigen::Lower>();
}

inline void require_residuals(const ResidualMatrix& residuals) {
    if (!residuals.values.allFinite()) {
        throw ValidityError("residual matrix has non-finite entries");
    }
}

inline void require_column(const ResidualMatrix& residuals, std::size_t j) {
    if (j >= static_cast<std::size_t>(residuals.columns())) {
        throw ParameterError("column " + std::to_string(j) + " out of range");
    }
}

}  // namespace detail

/// Lasso regression of column j on columns 0..j-1:
/// argmin ||y_j - sum_k zeta_k y_k||^2 + lambda ||zeta||_1.
/// lambda = 0 returns the (minimum-norm) least-squares solution directly.
inline LassoResult lasso_row(const ResidualMatrix& residuals, std::size_t j, double lambda) {
    detail::require_residuals(residuals);
    detail::require_column(residuals, j);
    if (!(lambda >= 0.0)) {
        throw ParameterError("lambda must be nonnegative");
    }
    const auto col = static_cast<Eigen::Index>(j);
    if (lambda == 0.0) {
        return {detail::ols_row(residuals.values, col), true, 0};
    }
    const Matrix head = residuals.values.leftCols(col + 1);
    return detail::lasso_gram(detail::gram_of(head), col, lambda, Vector::Zero(col));
}

/// Smallest lambda on the bisection bracket [0, lambda_max (1 + 1e-6)] whose
/// solution has at most tau nonzeros, together with that solution.
inline TargetResult lambda_for_target(const ResidualMatrix& residuals, std::size_t j, std::size_t tau) {
    detail::require_residuals(residuals);
    detail::require_column(residuals, j);
    const auto col = static_cast<Eigen::Index>(j);
    const Matrix head = residuals.values.leftCols(col + 1);
    return detail::lambda_for_target_gram(head, detail::gram_of(head), col, tau);
}

/// Nonzero budget for column j: nullopt for geometric columns (solved by
/// least squares), otherwise every geometric column plus the same PC's
/// earlier time points.
inline std::optional<std::size_t> default_tau(const ModelSpec& spec, std::size_t j) {
    if (spec.is_geometric(j)) {
        return std::nullopt;
    }
    return spec.kg + spec.time_of(j);
}

/// Solves the rows of the precision factorization independently from a
/// shared Gram matrix and assembles the estimate.
class PrecisionRowSolver {
public:
    PrecisionRowSolver(const ResidualMatrix& residuals, const ModelSpec& spec, PenaltyPolicy policy)
        : data_(residuals.values), spec_(spec), policy_(std::move(policy)) {
        detail::require_residuals(residuals);
        if (data_.cols() != static_cast<Eigen::Index>(spec_.p())) {
            throw DimensionError("residual matrix has " + std::to_string(data_.cols()) + " columns, expected " +
                                 std::to_string(spec_.p()));
        }
        if (data_.rows() < 1) {
            throw DimensionError("residual matrix has no rows");
        }
        policy_.validate(spec_.p());
        gram_ = detail::gram_of(data_);
    }

    [[nodiscard]] std::size_t columns() const { return spec_.p(); }

    [[nodiscard]] RowFit solve(std::size_t row) const {
        const auto j = static_cast<Eigen::Index>(row);
        RowFit fit;
        if (j == 0) {
            fit.coefficients = Vector(0);
        } else {
            switch (policy_.mode) {
                case PenaltyMode::target_sparsity: {
                    std::optional<std::size_t> tau =
                        policy_.tau ? std::optional<std::size_t>((*policy_.tau)[row]) : default_tau(spec_, row);
                    if (spec_.is_geometric(row) || !tau) {
                        fit.coefficients = detail::ols_row(data_, j);
                    } else {
                        auto target = detail::lambda_for_target_gram(data_, gram_, j, *tau);
                        fit.coefficients = std::move(target.coefficients);
                        fit.lambda = target.lambda;
                    }
                    break;
                }
                case PenaltyMode::fixed_lambda: {
                    const Vector& lambdas = *policy_.lambda;
                    const double lambda = lambdas.size() == 1 ? lambdas(0) : lambdas(j);
                    if (lambda == 0.0) {
                        fit.coefficients = detail::ols_row(data_, j);
                    } else {
                        auto lasso = detail::lasso_gram(gram_, j, lambda, Vector::Zero(j));
                        fit.coefficients = std::move(lasso.coefficients);
                        fit.converged = lasso.converged;
                    }
                    fit.lambda = lambda;
                    break;
                }
                case PenaltyMode::cross_validation:
                    if (spec_.is_geometric(row)) {
                        fit.coefficients = detail::ols_row(data_, j);
                    } else {
                        fit = cross_validated(j);
                    }
                    break;
            }
        }
        fit.nonzeros = detail::count_nonzeros(fit.coefficients);
        fit.rss = detail::row_rss(data_, j, fit.coefficients);
        return fit;
    }

    /// L = I - zeta, d_j = rss_j / (N - nonzeros_j), Sigma = L^{-1} D L^{-T}.
    [[nodiscard]] CholeskyEstimate assemble(const std::vector<RowFit>& rows) const {
        const auto p = static_cast<Eigen::Index>(spec_.p());
        const auto n = static_cast<std::size_t>(data_.rows());
        if (rows.size() != spec_.p()) {
            throw DimensionError("need one row fit per outcome column");
        }
        double scale = 1.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            scale = std::max(scale, gram_(j, j) / static_cast<double>(n));
        }

        CholeskyEstimate est;
        est.factors.l = Matrix::Identity(p, p);
        est.factors.d = Vector(p);
        est.lambdas = Vector(p);
        est.support.resize(spec_.p());
        for (Eigen::Index j = 0; j < p; ++j) {
            const RowFit& fit = rows[static_cast<std::size_t>(j)];
            if (fit.nonzeros >= n) {
                throw OverfitError(static_cast<std::size_t>(j), n, fit.nonzeros);
            }
            const double d = fit.rss / static_cast<double>(n - fit.nonzeros);
            if (!(d > 1e-24 * scale)) {
                throw DegenerateColumnError(static_cast<std::size_t>(j));
            }
            est.factors.d(j) = d;
            est.lambdas(j) = fit.lambda;
            est.converged = est.converged && fit.converged;
            for (Eigen::Index k = 0; k < j; ++k) {
                if (fit.coefficients(k) != 0.0) {
                    est.factors.l(j, k) = -fit.coefficients(k);
                    est.support[static_cast<std::size_t>(j)].push_back(static_cast<std::size_t>(k));
                }
            }
        }
        est.sigma_inv_hat = linalg::symmetrized(est.factors.precision());
        est.sigma_hat = est.factors.covariance();
        return est;
    }

private:
    // k-fold CV over a descending log grid lambda_max .. lambda_max * 1e-4;
    // folds are i mod k. The winning lambda is refit on all rows.
    [[nodiscard]] RowFit cross_validated(Eigen::Index j) const {
        const double lambda_max = detail::lambda_max_gram(gram_, j);
        RowFit fit;
        if (lambda_max == 0.0) {
            fit.coefficients = Vector::Zero(j);
            return fit;
        }
        const std::size_t folds = policy_.cv_folds;
        std::vector<double> grid(kCvGridSize);
        for (std::size_t g = 0; g < kCvGridSize; ++g) {
            const double frac = static_cast<double>(g) / static_cast<double>(kCvGridSize - 1);
            grid[g] = lambda_max * std::pow(1e-4, frac);
        }
        std::vector<double> errors(kCvGridSize, 0.0);
        const Matrix head = data_.leftCols(j + 1);
        for (std::size_t f = 0; f < folds; ++f) {
            std::vector<Eigen::Index> test_rows;
            for (Eigen::Index i = 0; i < head.rows(); ++i) {
                if (static_cast<std::size_t>(i) % folds == f) {
                    test_rows.push_back(i);
                }
            }
            const Matrix test = head(test_rows, Eigen::all);
            const Matrix test_gram = detail::gram_of(test);
            const Matrix train_gram = gram_.topLeftCorner(j + 1, j + 1) - test_gram;
            Vector warm = Vector::Zero(j);
            for (std::size_t g = 0; g < kCvGridSize; ++g) {
                auto lasso = detail::lasso_gram(train_gram, j, grid[g], warm);
                warm = lasso.coefficients;
                const Vector& b = lasso.coefficients;
                errors[g] += test_gram(j, j) - 2.0 * b.dot(test_gram.col(j).head(j)) +
                             b.dot(test_gram.topLeftCorner(j, j) * b);
            }
        }
        const auto best = static_cast<std::size_t>(std::min_element(errors.begin(), errors.end()) - errors.begin());
        auto lasso = detail::lasso_gram(gram_, j, grid[best], Vector::Zero(j));
        fit.coefficients = std::move(lasso.coefficients);
        fit.converged = lasso.converged;
        fit.lambda = grid[best];
        return fit;
    }

    Matrix data_;
    ModelSpec spec_;
    PenaltyPolicy policy_;
    Matrix gram_;
};

/// Estimates Sigma^{-1} = L^T D^{-1} L from residuals by independent
/// per-row regressions. Rows may be solved on up to `threads` workers; the
/// result does not depend on the worker count.
inline CholeskyEstimate estimate_precision(const ResidualMatrix& residuals, const ModelSpec& spec,
                                           const PenaltyPolicy& policy, std::size_t threads = 1) {
    PrecisionRowSolver solver(residuals, spec, policy);
    std::vector<RowFit> rows(solver.columns());
    parallel_for(rows.size(), threads, [&](std::size_t j) { rows[j] = solver.solve(j); });
    return solver.assemble(rows);
}

}  // namespace structmix
