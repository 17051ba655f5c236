#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "structmix/chol_regression.hpp"
#include "structmix/linalg.hpp"
#include "structmix/mixed_model.hpp"
#include "structmix/model_spec.hpp"
#include "structmix/parallel.hpp"
#include "structmix/pca.hpp"
#include "structmix/random.hpp"
#include "structmix/structured_cov.hpp"

namespace structmix {

enum class Method { proposed, no_regularization, no_random_effects };

inline const char* to_string(Method m) {
    switch (m) {
        case Method::proposed:
            return "proposed";
        case Method::no_regularization:
            return "no_regularization";
        case Method::no_random_effects:
            return "no_random_effects";
    }
    return "";
}

inline Method method_from_string(const std::string& name) {
    if (name == "proposed") return Method::proposed;
    if (name == "no_regularization") return Method::no_regularization;
    if (name == "no_random_effects") return Method::no_random_effects;
    throw ParameterError("unknown method '" + name + "'");
}

/// True parameters of the generative model. alpha_g is pu x kg, alpha_f is
/// kf x pu, beta is kf x pw; covariance.sigma_eps2 is the error variance.
struct Truth {
    Matrix alpha_g;
    Matrix alpha_f;
    Matrix beta;
    StructuredCovariance covariance;
};

/// Settings of the optional path that re-estimates the PC projections from
/// synthetic momenta and functional fields.
struct EstimatedPcOptions {
    bool enabled = false;
    std::size_t geometric_points = 40;   ///< d of the d x 3 momenta
    std::size_t functional_points = 60;  ///< vertices of the functional field
    double noise_sd = 0.1;
};

struct StudyConfig {
    ModelSpec spec;
    std::size_t runs = 20;
    std::uint64_t seed = 0;
    Truth truth;
    std::vector<Method> methods{Method::proposed, Method::no_regularization, Method::no_random_effects};
    EstimatedPcOptions estimated_pcs;
    PenaltyPolicy policy;
    FitOptions fit;
    std::size_t threads = 1;  ///< runs in parallel; 0 = hardware concurrency

    void validate() const {
        spec.validate();
        if (runs < 1) {
            throw ParameterError("runs must be >= 1");
        }
        if (spec.pw > 2) {
            throw ParameterError("the stimulus generator supports at most 2 time-varying covariates");
        }
        const auto pu = static_cast<Eigen::Index>(spec.pu);
        const auto pw = static_cast<Eigen::Index>(spec.pw);
        if (truth.alpha_g.rows() != pu || truth.alpha_g.cols() != static_cast<Eigen::Index>(spec.kg) ||
            truth.alpha_f.rows() != static_cast<Eigen::Index>(spec.kf) || truth.alpha_f.cols() != pu ||
            truth.beta.cols() != pw || (pw > 0 && truth.beta.rows() != static_cast<Eigen::Index>(spec.kf))) {
            throw DimensionError("truth fixed effects do not match the model dimensions");
        }
        validate_blocks(truth.covariance, spec);
        policy.validate(spec.p());
    }
};

/// Paper-default values used by reference_truth (full 5/5/2/2 dimensions).
namespace reference_study {
inline constexpr std::array<double, 10> kAlphaG{1, 0, 0, 1, 0.5, 0.5, 0.2, 0.6, 1.5, 0.5};
inline constexpr std::array<double, 10> kAlphaF{1, 1, 0.5, 1.5, 0.5, 0.5, 1, 0, 0, 1};
inline constexpr std::array<double, 10> kBeta{0, 1, 1, 0, 0.5, 0.5, 1.5, 0.5, -0.3, -0.7};
inline constexpr std::array<double, 5> kSigmaGG{25, 16, 9, 4, 1};
inline constexpr std::array<double, 5> kBlockVariances{30, 20, 10, 5, 1};
inline constexpr double kSigmaEps = 0.5;
inline constexpr double kRho = 0.5;
inline constexpr double kCrossCorrelation = 0.6;
}  // namespace reference_study

/// Simulation truth with the published effect sizes and variances.
///
/// vec(alpha^G), vec(alpha^F) and vec(beta) are unpacked column-major into
/// the pu x kg, kf x pu and kf x pw matrices. Smaller dimensions (kg, kf <= 5,
/// pu, pw <= 2) take the leading sub-blocks. Sigma_GF couples geometric PC k
/// with functional PC k only: entry (k, tau) = c * sqrt(Sigma_GG(k) v_k) rho^tau,
/// which keeps the assembled covariance PD for any |c| < 1.
inline Truth reference_truth(const ModelSpec& spec, double rho = reference_study::kRho,
                            double cross = reference_study::kCrossCorrelation, double sigma_eps = reference_study::kSigmaEps) {
    if (spec.kg > 5 || spec.kf > 5 || spec.pu > 2 || spec.pw > 2) {
        throw ParameterError("default truth supports kg, kf <= 5 and pu, pw <= 2; provide an explicit truth");
    }
    const Eigen::Map<const Eigen::Matrix<double, 2, 5>> alpha_g(reference_study::kAlphaG.data());
    const Eigen::Map<const Eigen::Matrix<double, 5, 2>> alpha_f(reference_study::kAlphaF.data());
    const Eigen::Map<const Eigen::Matrix<double, 5, 2>> beta(reference_study::kBeta.data());
    const auto kg = static_cast<Eigen::Index>(spec.kg);
    const auto kf = static_cast<Eigen::Index>(spec.kf);
    const auto pu = static_cast<Eigen::Index>(spec.pu);
    const auto pw = static_cast<Eigen::Index>(spec.pw);
    const auto t = static_cast<Eigen::Index>(spec.t);

    Truth truth;
    truth.alpha_g = alpha_g.topLeftCorner(pu, kg);
    truth.alpha_f = alpha_f.topLeftCorner(kf, pu);
    truth.beta = beta.topLeftCorner(kf, pw);
    truth.covariance.sigma_gg = Eigen::Map<const Vector>(reference_study::kSigmaGG.data(), 5).head(kg);
    truth.covariance.sigma_eps2 = sigma_eps * sigma_eps;
    for (Eigen::Index k = 0; k < kf; ++k) {
        const double v = reference_study::kBlockVariances[static_cast<std::size_t>(k)];
        truth.covariance.sigma_ff.push_back(ar1_block(v, rho, spec.t));
        Matrix gf = Matrix::Zero(kg, t);
        if (k < kg) {
            const double scale = cross * std::sqrt(truth.covariance.sigma_gg(k) * v);
            for (Eigen::Index tau = 0; tau < t; ++tau) {
                gf(k, tau) = scale * std::pow(rho, static_cast<double>(tau));
            }
        }
        truth.covariance.sigma_gf.push_back(gf);
    }
    return truth;
}

/// Study configuration with the published settings at a given T.
inline StudyConfig reference_config(std::size_t t, std::size_t runs = 20, std::uint64_t seed = 20200101,
                                   std::size_t n = 200) {
    StudyConfig config;
    config.spec = ModelSpec{5, 5, t, 2, 2, n};
    config.runs = runs;
    config.seed = seed;
    config.truth = reference_truth(config.spec);
    return config;
}

/// Two phase-shifted boxcar stimuli: block length max(1, floor(T/5)); the
/// first signal is on in even blocks, the second in odd blocks.
inline Matrix stimulus_signals(std::size_t n, std::size_t t, std::size_t pw) {
    const std::size_t block = std::max<std::size_t>(1, t / 5);
    Matrix w(static_cast<Eigen::Index>(n * t), static_cast<Eigen::Index>(pw));
    for (std::size_t m = 0; m < pw; ++m) {
        for (std::size_t tau = 0; tau < t; ++tau) {
            const double on = ((tau / block + m) % 2 == 0) ? 1.0 : 0.0;
            w.block(static_cast<Eigen::Index>(tau * n), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n), 1)
                .setConstant(on);
        }
    }
    return w;
}

/// Orthonormal basis with the largest-magnitude entry of each column positive.
inline Matrix random_orthonormal_basis(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(rows, cols, rng));
    Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        Eigen::Index arg = 0;
        q.col(c).cwiseAbs().maxCoeff(&arg);
        if (q(arg, c) < 0.0) {
            q.col(c) *= -1.0;
        }
    }
    return q;
}

struct Dataset {
    Matrix u;         ///< N x pu
    Matrix w;         ///< (N T) x pw
    Matrix outcomes;  ///< N x p actual projection coefficients
    Matrix random_effects;
    std::optional<Matrix> momenta;          ///< N x 3d synthetic momenta
    std::optional<Matrix> fields;           ///< (N T) x d functional data, subject fastest
    std::optional<Matrix> estimated_outcomes;  ///< projections on estimated PCs
};

namespace detail {

// Draws rows of N(0, sigma) through a pivoted LDL^T factor, so PSD (even
// all-zero) covariances are accepted and indefinite ones rejected.
inline Matrix sample_gaussian_rows(const Matrix& sigma, Eigen::Index n, Rng& rng) {
    const auto p = sigma.rows();
    Eigen::LDLT<Matrix> ldlt(sigma);
    const Vector d = ldlt.vectorD();
    const double scale = std::max(1.0, d.cwiseAbs().maxCoeff());
    if (ldlt.info() != Eigen::Success || d.minCoeff() < -1e-10 * scale) {
        throw ValidityError("truth covariance is not positive semidefinite");
    }
    const Matrix z = gaussian_matrix(p, n, rng);
    Matrix l = ldlt.matrixL();
    const Matrix scaled = l * (d.cwiseMax(0.0).cwiseSqrt().asDiagonal() * z);
    Matrix x = ldlt.transpositionsP().transpose() * scaled;
    return x.transpose();
}

// Basis-generating stream: fixed per study (the generative PCs do not change
// between runs).
inline std::uint64_t basis_seed(std::uint64_t seed) { return splitmix64(seed ^ 0x5043424153495331ULL); }

}  // namespace detail

/// Simulates one run. Draw order: U (column by column), random effects,
/// errors, then the optional momenta/field noise.
inline Dataset generate_dataset(const StudyConfig& config, std::size_t run_index) {
    config.validate();
    if (run_index >= config.runs) {
        throw ParameterError("run index out of range");
    }
    const ModelSpec& spec = config.spec;
    const auto n = static_cast<Eigen::Index>(spec.n);
    const auto p = static_cast<Eigen::Index>(spec.p());
    Rng rng(derive_seed(config.seed, run_index));

    Dataset data;
    data.u.resize(n, static_cast<Eigen::Index>(spec.pu));
    std::normal_distribution<double> u_normal(3.0, std::sqrt(3.0));
    std::student_t_distribution<double> u_student(3.0);
    for (Eigen::Index c = 0; c < data.u.cols(); ++c) {
        for (Eigen::Index i = 0; i < n; ++i) {
            data.u(i, c) = (c % 2 == 0) ? u_normal(rng) : u_student(rng) + 3.0;
        }
    }
    data.w = stimulus_signals(spec.n, spec.t, spec.pw);

    StructuredCovariance gamma_cov = config.truth.covariance;
    const double sigma_eps = std::sqrt(gamma_cov.sigma_eps2);
    gamma_cov.sigma_eps2 = 0.0;
    data.random_effects = detail::sample_gaussian_rows(assemble_sigma(gamma_cov, spec), n, rng);
    const Matrix errors = sigma_eps * gaussian_matrix(n, p, rng);

    const Design design(data.u, data.w, spec);
    const FixedEffects fe =
        FixedEffects::from_matrices(spec, config.truth.alpha_g, config.truth.alpha_f, config.truth.beta);
    data.outcomes = fitted_values(design, fe) + data.random_effects + errors;

    if (config.estimated_pcs.enabled) {
        const auto& opts = config.estimated_pcs;
        Rng basis_rng(detail::basis_seed(config.seed));
        const auto kg = static_cast<Eigen::Index>(spec.kg);
        const auto kf = static_cast<Eigen::Index>(spec.kf);
        const auto t = static_cast<Eigen::Index>(spec.t);
        const Matrix psi_g =
            random_orthonormal_basis(static_cast<Eigen::Index>(3 * opts.geometric_points), kg, basis_rng);
        const Matrix psi_f = random_orthonormal_basis(static_cast<Eigen::Index>(opts.functional_points), kf, basis_rng);

        data.momenta = Matrix(data.outcomes.leftCols(kg) * psi_g.transpose() +
                              opts.noise_sd * gaussian_matrix(n, psi_g.rows(), rng));
        Matrix fields(n * t, psi_f.rows());
        for (Eigen::Index tau = 0; tau < t; ++tau) {
            Matrix coeffs(n, kf);
            for (Eigen::Index k = 0; k < kf; ++k) {
                coeffs.col(k) = data.outcomes.col(kg + k * t + tau);
            }
            fields.middleRows(tau * n, n) = coeffs * psi_f.transpose();
        }
        fields += opts.noise_sd * gaussian_matrix(n * t, psi_f.rows(), rng);
        data.fields = fields;

        // Bases from the covariate-residualized data; projections of the raw data.
        const PcBasis geo = empirical_pca(pre_residualize(*data.momenta, data.u), spec.kg);
        Matrix uw(n * t, static_cast<Eigen::Index>(spec.pu + spec.pw));
        uw << design.u_repeated(), data.w;
        const PcBasis fun = fpca_flat(pre_residualize(fields, uw), spec.kf);

        Matrix estimated(n, p);
        estimated.leftCols(kg) = *data.momenta * geo.components;
        const Matrix fscores = fields * fun.components;
        for (Eigen::Index tau = 0; tau < t; ++tau) {
            for (Eigen::Index k = 0; k < kf; ++k) {
                estimated.col(kg + k * t + tau) = fscores.col(k).segment(tau * n, n);
            }
        }
        data.estimated_outcomes = std::move(estimated);
    }
    return data;
}

struct MethodFit {
    Method method = Method::proposed;
    std::optional<FitResult> fit;
    std::string error;
    double seconds = 0.0;
};

inline constexpr double kTruncationFloor = 1e-5;

/// Fits each requested method on (u, w, outcomes).
///
/// proposed: the full iteration under `policy`. no_regularization: the same
/// iteration with unpenalized rows when N > p, otherwise with the empirical
/// residual second-moment matrix floored at 1e-5. no_random_effects: one GLS
/// step with identity weight; its Sigma is the pooled residual variance times I.
inline std::vector<MethodFit> fit_baselines(const Matrix& u, const Matrix& w, const Matrix& outcomes,
                                            const ModelSpec& spec, const std::vector<Method>& which,
                                            const PenaltyPolicy& policy = {}, const FitOptions& options = {}) {
    const Design design(u, w, spec);
    const auto p = static_cast<Eigen::Index>(spec.p());
    std::vector<MethodFit> fits;
    for (Method method : which) {
        MethodFit out;
        out.method = method;
        const auto start = std::chrono::steady_clock::now();
        try {
            switch (method) {
                case Method::proposed:
                    out.fit = fit_iterative(outcomes, design, policy, options);
                    break;
                case Method::no_regularization:
                    if (spec.n > spec.p()) {
                        out.fit = fit_iterative(outcomes, design, PenaltyPolicy::fixed_lambda(0.0), options);
                    } else {
                        const double n = static_cast<double>(spec.n);
                        out.fit = fit_iterative_with(outcomes, design, options, [&](const ResidualMatrix& r) {
                            const Matrix moment = linalg::symmetrized(r.values.transpose() * r.values / n);
                            return CovarianceUpdate{ensure_pd(moment, kTruncationFloor),
                                                    ensure_pd_inverse(moment, kTruncationFloor), std::nullopt};
                        });
                    }
                    break;
                case Method::no_random_effects: {
                    FitResult fit;
                    fit.b_hat = gls_update(design, Matrix::Identity(p, p), outcomes);
                    const Matrix r = residuals_of(design, fit.b_hat, outcomes);
                    const double dof = static_cast<double>(r.size()) - static_cast<double>(design.cols());
                    const double s2 = r.squaredNorm() / std::max(1.0, dof);
                    fit.sigma_hat = s2 * Matrix::Identity(p, p);
                    fit.sigma_inv_hat = Matrix::Identity(p, p) / s2;
                    fit.iterations = 1;
                    fit.converged = true;
                    out.fit = std::move(fit);
                    break;
                }
            }
        } catch (const Error& e) {
            out.error = e.what();
        }
        out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        fits.push_back(std::move(out));
    }
    return fits;
}

inline constexpr std::size_t kGroups = 3;  // alpha_g, alpha_f, beta

/// Squared errors of one fit against the truth.
struct RunErrors {
    std::array<std::vector<double>, kGroups> fixed;  ///< per coefficient, by group
    Matrix covariance;                               ///< element-wise squared error
};

inline RunErrors evaluate_run(const FixedEffects& estimate, const Matrix& sigma_hat, const FixedEffects& truth_fe,
                              const Matrix& truth_sigma) {
    if (estimate.b.size() != truth_fe.b.size() || sigma_hat.rows() != truth_sigma.rows() ||
        sigma_hat.cols() != truth_sigma.cols()) {
        throw DimensionError("estimate and truth dimensions differ");
    }
    RunErrors errors;
    const auto labels = coefficient_labels(truth_fe.spec);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double e = estimate.b(static_cast<Eigen::Index>(i)) - truth_fe.b(static_cast<Eigen::Index>(i));
        errors.fixed[static_cast<std::size_t>(labels[i].group)].push_back(e * e);
    }
    errors.covariance = (sigma_hat - truth_sigma).cwiseAbs2();
    return errors;
}

inline RunErrors evaluate_run(const FitResult& fit, const Truth& truth, const ModelSpec& spec) {
    const FixedEffects truth_fe = FixedEffects::from_matrices(spec, truth.alpha_g, truth.alpha_f, truth.beta);
    return evaluate_run(fit.b_hat, fit.sigma_hat, truth_fe, assemble_sigma(truth.covariance, spec));
}

/// sqrt(mean of squares); 0 for an empty input.
inline double root_mean_square(const std::vector<double>& squares) {
    if (squares.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (double s : squares) {
        total += s;
    }
    return std::sqrt(total / static_cast<double>(squares.size()));
}

struct MethodMetrics {
    Method method = Method::proposed;
    std::string source = "actual";  ///< "actual" or "estimated" projections
    std::size_t successful_runs = 0;
    std::array<double, kGroups> fixed_rmse{};              ///< pooled over runs
    std::vector<std::array<double, kGroups>> run_fixed_rmse;  ///< per successful run
    Matrix cov_rmse;                                        ///< element-wise, over runs
    double cov_rmse_median = 0.0;
    std::vector<std::size_t> iterations;
    std::vector<bool> converged;
    std::vector<double> seconds;  ///< wall-clock per fit (not reproducible)
};

struct RunFailure {
    std::size_t run = 0;
    Method method = Method::proposed;
    std::string source;
    std::string message;
};

struct MetricsReport {
    ModelSpec spec;
    std::size_t runs = 0;
    std::uint64_t seed = 0;
    std::vector<MethodMetrics> methods;
    std::vector<RunFailure> failures;
    std::vector<double> design_condition;  ///< condition number of (U_T, W) per run
};

inline double median_of(const Matrix& m) {
    std::vector<double> values(m.data(), m.data() + m.size());
    if (values.empty()) {
        return 0.0;
    }
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
    std::nth_element(values.begin(), mid, values.end());
    if (values.size() % 2 == 1) {
        return *mid;
    }
    const double upper = *mid;
    const double lower = *std::max_element(values.begin(), mid);
    return 0.5 * (lower + upper);
}

namespace detail {

struct RunOutcome {
    std::vector<std::string> sources;
    std::vector<std::vector<MethodFit>> fits;  // [source][method]
    std::vector<std::optional<RunErrors>> errors;  // flattened [source * methods + method]
    double condition = 0.0;
    std::string generation_error;
};

inline double condition_number(const Matrix& m) {
    Eigen::JacobiSVD<Matrix> svd(m);
    const Vector& s = svd.singularValues();
    return s(s.size() - 1) > 0.0 ? s(0) / s(s.size() - 1) : std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// Runs every replicate (in parallel when config.threads != 1) and reduces
/// the per-run errors in run order, so the report does not depend on the
/// thread count. Per-run failures are logged and skipped.
inline MetricsReport run_study(const StudyConfig& config) {
    config.validate();
    const ModelSpec& spec = config.spec;
    const FixedEffects truth_fe =
        FixedEffects::from_matrices(spec, config.truth.alpha_g, config.truth.alpha_f, config.truth.beta);
    const Matrix truth_sigma = assemble_sigma(config.truth.covariance, spec);

    const std::size_t workers = std::min(resolve_threads(config.threads), config.runs);
    FitOptions fit_options = config.fit;
    if (workers > 1) {
        fit_options.threads = 1;
    }

    std::vector<detail::RunOutcome> outcomes(config.runs);
    parallel_for(config.runs, workers, [&](std::size_t run) {
        detail::RunOutcome& out = outcomes[run];
        Dataset data;
        try {
            data = generate_dataset(config, run);
        } catch (const Error& e) {
            out.generation_error = e.what();
            return;
        }
        Matrix uw(data.w.rows(), data.u.cols() + data.w.cols());
        uw << data.u.replicate(static_cast<Eigen::Index>(spec.t), 1), data.w;
        out.condition = detail::condition_number(uw);

        out.sources.push_back("actual");
        out.fits.push_back(fit_baselines(data.u, data.w, data.outcomes, spec, config.methods, config.policy, fit_options));
        if (data.estimated_outcomes) {
            out.sources.push_back("estimated");
            out.fits.push_back(fit_baselines(data.u, data.w, *data.estimated_outcomes, spec, config.methods,
                                             config.policy, fit_options));
        }
        for (const auto& source_fits : out.fits) {
            for (const auto& mf : source_fits) {
                out.errors.push_back(mf.fit ? std::optional<RunErrors>(evaluate_run(mf.fit->b_hat, mf.fit->sigma_hat,
                                                                                    truth_fe, truth_sigma))
                                            : std::nullopt);
            }
        }
    });

    MetricsReport report;
    report.spec = spec;
    report.runs = config.runs;
    report.seed = config.seed;
    const std::vector<std::string> sources =
        config.estimated_pcs.enabled ? std::vector<std::string>{"actual", "estimated"} : std::vector<std::string>{"actual"};
    const auto p = static_cast<Eigen::Index>(spec.p());

    for (std::size_t s = 0; s < sources.size(); ++s) {
        for (std::size_t m = 0; m < config.methods.size(); ++m) {
            MethodMetrics metrics;
            metrics.method = config.methods[m];
            metrics.source = sources[s];
            std::array<std::vector<double>, kGroups> pooled;
            Matrix cov_sum = Matrix::Zero(p, p);
            for (std::size_t run = 0; run < config.runs; ++run) {
                const auto& out = outcomes[run];
                if (!out.generation_error.empty() || s >= out.fits.size()) {
                    continue;
                }
                const MethodFit& mf = out.fits[s][m];
                const auto& errors = out.errors[s * config.methods.size() + m];
                if (!mf.fit || !errors) {
                    report.failures.push_back({run, mf.method, sources[s], mf.error});
                    continue;
                }
                ++metrics.successful_runs;
                std::array<double, kGroups> run_rmse{};
                for (std::size_t g = 0; g < kGroups; ++g) {
                    run_rmse[g] = root_mean_square(errors->fixed[g]);
                    pooled[g].insert(pooled[g].end(), errors->fixed[g].begin(), errors->fixed[g].end());
                }
                metrics.run_fixed_rmse.push_back(run_rmse);
                cov_sum += errors->covariance;
                metrics.iterations.push_back(mf.fit->iterations);
                metrics.converged.push_back(mf.fit->converged);
                metrics.seconds.push_back(mf.seconds);
            }
            for (std::size_t g = 0; g < kGroups; ++g) {
                metrics.fixed_rmse[g] = root_mean_square(pooled[g]);
            }
            metrics.cov_rmse = metrics.successful_runs > 0
                                   ? Matrix((cov_sum / static_cast<double>(metrics.successful_runs)).cwiseSqrt())
                                   : Matrix::Zero(p, p);
            metrics.cov_rmse_median = median_of(metrics.cov_rmse);
            report.methods.push_back(std::move(metrics));
        }
    }
    for (std::size_t run = 0; run < config.runs; ++run) {
        if (!outcomes[run].generation_error.empty()) {
            report.failures.push_back({run, Method::proposed, "generation", outcomes[run].generation_error});
        }
        report.design_condition.push_back(outcomes[run].condition);
    }
    return report;
}

}  // namespace structmix
