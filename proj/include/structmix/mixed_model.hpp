#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "structmix/chol_regression.hpp"
#include "structmix/linalg.hpp"
#include "structmix/model_spec.hpp"
#include "structmix/structured_cov.hpp"

namespace structmix {

/// Packed fixed effects: kg blocks of pu geometric coefficients (alpha^G per
/// PC), then kf blocks of pu + pw functional coefficients (alpha^F then beta
/// per PC).
struct FixedEffects {
    ModelSpec spec;
    Vector b;

    static FixedEffects zeros(const ModelSpec& spec) {
        return {spec, Vector::Zero(static_cast<Eigen::Index>(spec.coefficient_count()))};
    }

    /// Builds the packed vector from alpha_g (pu x kg), alpha_f (kf x pu) and
    /// beta (kf x pw).
    static FixedEffects from_matrices(const ModelSpec& spec, const Matrix& alpha_g, const Matrix& alpha_f,
                                      const Matrix& beta) {
        const auto pu = static_cast<Eigen::Index>(spec.pu);
        const auto pw = static_cast<Eigen::Index>(spec.pw);
        if (alpha_g.rows() != pu || alpha_g.cols() != static_cast<Eigen::Index>(spec.kg) ||
            alpha_f.rows() != static_cast<Eigen::Index>(spec.kf) || alpha_f.cols() != pu || beta.cols() != pw ||
            (pw > 0 && beta.rows() != static_cast<Eigen::Index>(spec.kf))) {
            throw DimensionError("fixed-effect matrices do not match the model dimensions");
        }
        FixedEffects fe = zeros(spec);
        for (std::size_t g = 0; g < spec.kg; ++g) {
            fe.b.segment(fe.offset(g), pu) = alpha_g.col(static_cast<Eigen::Index>(g));
        }
        for (std::size_t k = 0; k < spec.kf; ++k) {
            const Eigen::Index off = fe.offset(spec.kg + k);
            fe.b.segment(off, pu) = alpha_f.row(static_cast<Eigen::Index>(k)).transpose();
            if (pw > 0) {
                fe.b.segment(off + pu, pw) = beta.row(static_cast<Eigen::Index>(k)).transpose();
            }
        }
        return fe;
    }

    /// Offset of coefficient group g: g < kg is geometric PC g, g = kg + k is
    /// functional PC k.
    [[nodiscard]] Eigen::Index offset(std::size_t group) const {
        if (group < spec.kg) {
            return static_cast<Eigen::Index>(group * spec.pu);
        }
        return static_cast<Eigen::Index>(spec.kg * spec.pu + (group - spec.kg) * (spec.pu + spec.pw));
    }

    [[nodiscard]] double alpha_g(std::size_t pc, std::size_t cov) const {
        return b(offset(pc) + static_cast<Eigen::Index>(cov));
    }
    [[nodiscard]] double alpha_f(std::size_t pc, std::size_t cov) const {
        return b(offset(spec.kg + pc) + static_cast<Eigen::Index>(cov));
    }
    [[nodiscard]] double beta(std::size_t pc, std::size_t cov) const {
        return b(offset(spec.kg + pc) + static_cast<Eigen::Index>(spec.pu + cov));
    }
};

enum class CoefficientGroup { alpha_g, alpha_f, beta };

inline const char* to_string(CoefficientGroup g) {
    switch (g) {
        case CoefficientGroup::alpha_g:
            return "alpha_g";
        case CoefficientGroup::alpha_f:
            return "alpha_f";
        case CoefficientGroup::beta:
            return "beta";
    }
    return "";
}

struct CoefficientLabel {
    CoefficientGroup group;
    std::size_t pc;         // 0-based
    std::size_t covariate;  // 0-based within U or W
};

/// Group label of every packed coefficient, in packed order.
inline std::vector<CoefficientLabel> coefficient_labels(const ModelSpec& spec) {
    std::vector<CoefficientLabel> labels;
    labels.reserve(spec.coefficient_count());
    for (std::size_t g = 0; g < spec.kg; ++g) {
        for (std::size_t c = 0; c < spec.pu; ++c) {
            labels.push_back({CoefficientGroup::alpha_g, g, c});
        }
    }
    for (std::size_t k = 0; k < spec.kf; ++k) {
        for (std::size_t c = 0; c < spec.pu; ++c) {
            labels.push_back({CoefficientGroup::alpha_f, k, c});
        }
        for (std::size_t c = 0; c < spec.pw; ++c) {
            labels.push_back({CoefficientGroup::beta, k, c});
        }
    }
    return labels;
}

/// Block design X = diag(I_kg (x) U, I_kf (x) (U_T, W)), kept implicit.
///
/// Outcome column c uses the per-column design Z(c): U for geometric columns
/// and [U, W_tau] for functional columns at time tau, where W_tau holds rows
/// tau*N .. tau*N + N - 1 of W. Cross products Z(a)^T Z(b) between design
/// types (type 0 = U, type 1 + tau = [U, W_tau]) are precomputed.
class Design {
public:
    Design(Matrix u, Matrix w, const ModelSpec& spec) : spec_(spec), u_(std::move(u)), w_(std::move(w)) {
        spec_.validate();
        const auto n = static_cast<Eigen::Index>(spec_.n);
        if (u_.rows() != n || u_.cols() != static_cast<Eigen::Index>(spec_.pu)) {
            throw DimensionError("U must be N x pu (" + std::to_string(spec_.n) + " x " + std::to_string(spec_.pu) +
                                 "), got " + std::to_string(u_.rows()) + " x " + std::to_string(u_.cols()));
        }
        if (spec_.pw == 0 && w_.size() == 0) {
            w_.resize(n * static_cast<Eigen::Index>(spec_.t), 0);
        }
        if (w_.rows() != n * static_cast<Eigen::Index>(spec_.t) || w_.cols() != static_cast<Eigen::Index>(spec_.pw)) {
            throw DimensionError("W must be (N*T) x pw, got " + std::to_string(w_.rows()) + " x " +
                                 std::to_string(w_.cols()));
        }
        linalg::require_finite(u_, "U");
        linalg::require_finite(w_, "W");
        const std::size_t types = spec_.t + 1;
        cross_.assign(types * types, Matrix());
        for (std::size_t a = 0; a < types; ++a) {
            const Matrix za = type_design(a);
            for (std::size_t b = a; b < types; ++b) {
                cross_[a * types + b] = za.transpose() * type_design(b);
                cross_[b * types + a] = cross_[a * types + b].transpose();
            }
        }
    }

    [[nodiscard]] const ModelSpec& spec() const { return spec_; }
    [[nodiscard]] const Matrix& u() const { return u_; }
    [[nodiscard]] const Matrix& w() const { return w_; }

    [[nodiscard]] std::size_t group_of(std::size_t column) const {
        return spec_.is_geometric(column) ? column : spec_.kg + spec_.pc_of(column);
    }
    [[nodiscard]] Eigen::Index group_width(std::size_t group) const {
        return static_cast<Eigen::Index>(group < spec_.kg ? spec_.pu : spec_.pu + spec_.pw);
    }
    [[nodiscard]] Eigen::Index group_offset(std::size_t group) const {
        if (group < spec_.kg) {
            return static_cast<Eigen::Index>(group * spec_.pu);
        }
        return static_cast<Eigen::Index>(spec_.kg * spec_.pu + (group - spec_.kg) * (spec_.pu + spec_.pw));
    }
    [[nodiscard]] std::size_t type_of(std::size_t column) const {
        return spec_.is_geometric(column) ? 0 : 1 + spec_.time_of(column);
    }

    /// N x width design of outcome column c.
    [[nodiscard]] Matrix column_design(std::size_t column) const { return type_design(type_of(column)); }

    /// Z(a)^T Z(b) for outcome columns a, b.
    [[nodiscard]] const Matrix& cross(std::size_t column_a, std::size_t column_b) const {
        return cross_[type_of(column_a) * (spec_.t + 1) + type_of(column_b)];
    }

    /// Logical shape of X.
    [[nodiscard]] Eigen::Index rows() const { return static_cast<Eigen::Index>(spec_.n * spec_.p()); }
    [[nodiscard]] Eigen::Index cols() const { return static_cast<Eigen::Index>(spec_.coefficient_count()); }

    /// (U, repeated T times) stacked: row tau*N + i is subject i.
    [[nodiscard]] Matrix u_repeated() const { return u_.replicate(static_cast<Eigen::Index>(spec_.t), 1); }

    /// Dense X with row c*N + i for subject i of outcome column c (column-major
    /// vec of the outcome matrix). Only meant for small reference checks.
    [[nodiscard]] Matrix materialize() const {
        Matrix x = Matrix::Zero(rows(), cols());
        const auto n = static_cast<Eigen::Index>(spec_.n);
        for (std::size_t c = 0; c < spec_.p(); ++c) {
            const std::size_t g = group_of(c);
            x.block(static_cast<Eigen::Index>(c) * n, group_offset(g), n, group_width(g)) = column_design(c);
        }
        return x;
    }

private:
    [[nodiscard]] Matrix type_design(std::size_t type) const {
        if (type == 0) {
            return u_;
        }
        const auto n = static_cast<Eigen::Index>(spec_.n);
        Matrix z(n, static_cast<Eigen::Index>(spec_.pu + spec_.pw));
        z.leftCols(static_cast<Eigen::Index>(spec_.pu)) = u_;
        z.rightCols(static_cast<Eigen::Index>(spec_.pw)) =
            w_.middleRows(static_cast<Eigen::Index>(type - 1) * n, n);
        return z;
    }

    ModelSpec spec_;
    Matrix u_;
    Matrix w_;
    std::vector<Matrix> cross_;
};

inline Design assemble_design(const Matrix& u, const Matrix& w, const ModelSpec& spec) { return Design(u, w, spec); }

struct IdentifiabilityReport {
    Eigen::Index u_rank = 0;
    Eigen::Index uw_rank = 0;
    bool ok = false;
};

namespace detail {

inline Eigen::Index numerical_rank(const Matrix& m) {
    if (m.size() == 0) {
        return 0;
    }
    Eigen::JacobiSVD<Matrix> svd(m);
    const Vector& s = svd.singularValues();
    const double tol = static_cast<double>(std::max(m.rows(), m.cols())) * std::numeric_limits<double>::epsilon() *
                       s(0);
    return static_cast<Eigen::Index>((s.array() > tol).count());
}

}  // namespace detail

/// Numerical column ranks of U and (U_T, W); ok iff both are full column
/// rank. T is inferred from the row counts.
inline IdentifiabilityReport validate_identifiability(const Matrix& u, const Matrix& w) {
    if (u.rows() == 0) {
        throw DimensionError("U has no rows");
    }
    IdentifiabilityReport report;
    report.u_rank = detail::numerical_rank(u);
    Matrix uw;
    if (w.cols() == 0) {
        uw = u;
    } else {
        if (w.rows() % u.rows() != 0) {
            throw DimensionError("W row count must be a multiple of N");
        }
        const Eigen::Index t = w.rows() / u.rows();
        uw.resize(w.rows(), u.cols() + w.cols());
        uw << u.replicate(t, 1), w;
    }
    report.uw_rank = detail::numerical_rank(uw);
    report.ok = report.u_rank == u.cols() && report.uw_rank == uw.cols();
    return report;
}

/// X^T (Sigma^{-1} (x) I_N) X assembled block by block: block (group(a),
/// group(b)) accumulates sigma_inv(a, b) * Z(a)^T Z(b).
inline Matrix normal_matrix(const Design& design, const Eigen::Ref<const Matrix>& sigma_inv) {
    const ModelSpec& spec = design.spec();
    const auto p = static_cast<Eigen::Index>(spec.p());
    if (sigma_inv.rows() != p || sigma_inv.cols() != p) {
        throw DimensionError("precision matrix must be p x p");
    }
    Matrix a = Matrix::Zero(design.cols(), design.cols());
    for (std::size_t ca = 0; ca < spec.p(); ++ca) {
        const std::size_t ga = design.group_of(ca);
        const Eigen::Index oa = design.group_offset(ga);
        const Eigen::Index wa = design.group_width(ga);
        for (std::size_t cb = 0; cb < spec.p(); ++cb) {
            const double s = sigma_inv(static_cast<Eigen::Index>(ca), static_cast<Eigen::Index>(cb));
            if (s == 0.0) {
                continue;
            }
            const std::size_t gb = design.group_of(cb);
            a.block(oa, design.group_offset(gb), wa, design.group_width(gb)).noalias() += s * design.cross(ca, cb);
        }
    }
    return linalg::symmetrized(a);
}

namespace detail {

inline Eigen::LLT<Matrix> factor_normal(const Matrix& a) {
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().array() > 0.0).all() ||
        llt.rcond() < 1e-13) {
        throw IdentifiabilityError("GLS normal matrix is singular; check the rank of U and (U_T, W)");
    }
    return llt;
}

inline void require_outcomes(const Design& design, const Eigen::Ref<const Matrix>& outcomes) {
    const ModelSpec& spec = design.spec();
    if (outcomes.rows() != static_cast<Eigen::Index>(spec.n) || outcomes.cols() != static_cast<Eigen::Index>(spec.p())) {
        throw DimensionError("outcomes must be N x p (" + std::to_string(spec.n) + " x " + std::to_string(spec.p()) +
                             ")");
    }
    linalg::require_finite(outcomes, "outcomes");
}

}  // namespace detail

/// GLS estimate [X^T (S (x) I) X]^{-1} X^T (S (x) I) vec(a) with S = sigma_inv.
inline FixedEffects gls_update(const Design& design, const Eigen::Ref<const Matrix>& sigma_inv,
                               const Eigen::Ref<const Matrix>& outcomes) {
    detail::require_outcomes(design, outcomes);
    const ModelSpec& spec = design.spec();
    const Matrix a = normal_matrix(design, sigma_inv);
    const auto llt = detail::factor_normal(a);

    // X^T (S (x) I) vec(a): column c of (outcomes * S) weighted into group(c).
    const Matrix weighted = outcomes * sigma_inv;
    Vector rhs = Vector::Zero(design.cols());
    for (std::size_t c = 0; c < spec.p(); ++c) {
        const std::size_t g = design.group_of(c);
        rhs.segment(design.group_offset(g), design.group_width(g)).noalias() +=
            design.column_design(c).transpose() * weighted.col(static_cast<Eigen::Index>(c));
    }
    return {spec, llt.solve(rhs)};
}

/// N x p matrix whose column-major vec is X B.
inline Matrix fitted_values(const Design& design, const FixedEffects& fe) {
    const ModelSpec& spec = design.spec();
    if (fe.b.size() != design.cols()) {
        throw DimensionError("fixed-effect vector length does not match the design");
    }
    Matrix fitted(static_cast<Eigen::Index>(spec.n), static_cast<Eigen::Index>(spec.p()));
    for (std::size_t c = 0; c < spec.p(); ++c) {
        const std::size_t g = design.group_of(c);
        fitted.col(static_cast<Eigen::Index>(c)).noalias() =
            design.column_design(c) * fe.b.segment(design.group_offset(g), design.group_width(g));
    }
    return fitted;
}

/// vec(a) - X B, reshaped to N x p.
inline Matrix residuals_of(const Design& design, const FixedEffects& fe, const Eigen::Ref<const Matrix>& outcomes) {
    return outcomes - fitted_values(design, fe);
}

struct FitOptions {
    double c_b = 1e-6;
    double c_sigma = 1e-6;
    std::size_t n_iter = 100;
    std::size_t threads = 1;
};

struct IterationTrace {
    double delta_b = 0.0;   // ||B(n) - B(n-1)||^2
    double delta_kl = 0.0;  // KL(Sigma(n), Sigma(n-1))
};

struct FitResult {
    FixedEffects b_hat;
    Matrix sigma_hat;
    Matrix sigma_inv_hat;
    std::size_t iterations = 0;
    std::vector<IterationTrace> trace;
    bool converged = false;
    std::optional<CholeskyEstimate> precision;  // last regression estimate, if any
};

/// Result of one covariance update inside the iteration.
struct CovarianceUpdate {
    Matrix sigma;
    Matrix sigma_inv;
    std::optional<CholeskyEstimate> estimate;
};

/// The alternating GLS / covariance iteration with a pluggable covariance
/// step `update(const ResidualMatrix&) -> CovarianceUpdate`.
///
/// Starts from B = 0, Sigma = I and loops while (dB >= c_b or dKL >= c_sigma)
/// and n < n_iter, with n starting at 1.
template <typename Update>
FitResult fit_iterative_with(const Eigen::Ref<const Matrix>& outcomes, const Design& design,
                             const FitOptions& options, Update&& update) {
    detail::require_outcomes(design, outcomes);
    const ModelSpec& spec = design.spec();
    const auto p = static_cast<Eigen::Index>(spec.p());

    FitResult result;
    result.b_hat = FixedEffects::zeros(spec);
    result.sigma_hat = Matrix::Identity(p, p);
    result.sigma_inv_hat = Matrix::Identity(p, p);
    double delta_b = std::numeric_limits<double>::infinity();
    double delta_kl = std::numeric_limits<double>::infinity();
    for (std::size_t n = 1; (delta_b >= options.c_b || delta_kl >= options.c_sigma) && n < options.n_iter; ++n) {
        FixedEffects b = gls_update(design, result.sigma_inv_hat, outcomes);
        delta_b = (b.b - result.b_hat.b).squaredNorm();
        ResidualMatrix residuals{residuals_of(design, b, outcomes)};
        CovarianceUpdate next = update(residuals);
        delta_kl = kl_divergence(next.sigma, result.sigma_hat);

        result.b_hat = std::move(b);
        result.sigma_hat = std::move(next.sigma);
        result.sigma_inv_hat = std::move(next.sigma_inv);
        result.precision = std::move(next.estimate);
        result.trace.push_back({delta_b, delta_kl});
        result.iterations = n;
    }
    result.converged = delta_b < options.c_b && delta_kl < options.c_sigma;
    return result;
}

/// Full estimator: GLS alternating with the regression-based precision
/// estimate under `policy`.
inline FitResult fit_iterative(const Eigen::Ref<const Matrix>& outcomes, const Design& design,
                               const PenaltyPolicy& policy, const FitOptions& options = {}) {
    const ModelSpec& spec = design.spec();
    return fit_iterative_with(outcomes, design, options, [&](const ResidualMatrix& residuals) {
        CholeskyEstimate est = estimate_precision(residuals, spec, policy, options.threads);
        CovarianceUpdate up{est.sigma_hat, est.sigma_inv_hat, std::nullopt};
        up.estimate = std::move(est);
        return up;
    });
}

struct WaldRow {
    CoefficientLabel label;
    double estimate = 0.0;
    double se = 0.0;
    double z = 0.0;
    double p_value = 1.0;
};

struct WaldReport {
    std::vector<WaldRow> rows;
    bool from_converged_fit = true;
};

/// Two-sided p-value of a standard-normal statistic.
inline double two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

/// Wald statistics B_i / se_i with se_i = sqrt(diag([X^T (S (x) I) X]^{-1})_i).
inline WaldReport wald_tests(const FitResult& fit, const Design& design) {
    const Matrix a = normal_matrix(design, fit.sigma_inv_hat);
    const auto llt = detail::factor_normal(a);
    const Matrix cov = llt.solve(Matrix::Identity(a.rows(), a.cols()));
    const auto labels = coefficient_labels(design.spec());

    WaldReport report;
    report.from_converged_fit = fit.converged;
    report.rows.reserve(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto idx = static_cast<Eigen::Index>(i);
        WaldRow row;
        row.label = labels[i];
        row.estimate = fit.b_hat.b(idx);
        row.se = std::sqrt(cov(idx, idx));
        row.z = row.estimate / row.se;
        row.p_value = two_sided_p(row.z);
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace structmix
