#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "structmix/io.hpp"
#include "structmix/mixed_model.hpp"
#include "structmix/pca.hpp"
#include "structmix/simulator.hpp"
#include "structmix/sparsity_oracle.hpp"

namespace structmix::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;

struct Options {
    std::string command;  ///< simulate, fit, verify or pca
    std::filesystem::path config;
    std::optional<std::filesystem::path> out;
    std::size_t threads = 0;  ///< 0 = hardware concurrency
    std::optional<std::uint64_t> seed;
};

/// Logger writing to stderr at the level named by STRUCTMIX_LOG
/// (error, warn, info, debug; default info).
inline std::shared_ptr<spdlog::logger> make_logger() {
    auto logger = spdlog::get("structmix");
    if (!logger) {
        logger = spdlog::stderr_color_mt("structmix");
        logger->set_pattern("[%l] %v");
    }
    logger->set_level(spdlog::level::info);
    if (const char* env = std::getenv("STRUCTMIX_LOG")) {
        const std::string level(env);
        if (level == "error" || level == "warn" || level == "info" || level == "debug") {
            logger->set_level(spdlog::level::from_str(level));
        } else {
            logger->warn("ignoring STRUCTMIX_LOG='{}' (expected error, warn, info or debug)", level);
        }
    }
    return logger;
}

namespace detail {

class Context {
public:
    Context(const Options& opts, io::Json config, spdlog::logger& log)
        : opts_(opts), config_(std::move(config)), log_(log) {}

    [[nodiscard]] const io::Json& config() const { return config_; }
    [[nodiscard]] spdlog::logger& log() const { return log_; }
    [[nodiscard]] const Options& options() const { return opts_; }

    /// Paths inside the config are relative to the config file's directory.
    [[nodiscard]] std::filesystem::path resolve(const std::string& p) const {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : opts_.config.parent_path() / path;
    }

    [[nodiscard]] std::filesystem::path out_dir() const {
        if (opts_.out) {
            return *opts_.out;
        }
        if (const io::Json* out = io::optional_field(config_, "out")) {
            return resolve(io::as_string(*out, "out"));
        }
        return std::filesystem::current_path();
    }

    void commit(const io::OutputSet& outputs) const {
        for (const auto& path : outputs.commit(out_dir())) {
            log_.info("wrote {}", path.string());
        }
    }

private:
    const Options& opts_;
    io::Json config_;
    spdlog::logger& log_;
};

inline int simulate(const Context& ctx) {
    StudyConfig study = io::study_from_json(io::require_field(ctx.config(), "study", ""), "study");
    study.threads = ctx.options().threads;
    if (ctx.options().seed) {
        study.seed = *ctx.options().seed;
    }
    ctx.log().info("study: {} runs, p = {}, N = {}, seed {}", study.runs, study.spec.p(), study.spec.n, study.seed);
    const MetricsReport report = run_study(study);
    for (const auto& f : report.failures) {
        ctx.log().warn("run {} {} ({}) failed: {}", f.run, to_string(f.method), f.source, f.message);
    }
    for (const auto& m : report.methods) {
        double total = 0.0;
        for (double s : m.seconds) total += s;
        ctx.log().info("{} ({}): {} runs, {:.3f} s per fit", to_string(m.method), m.source, m.successful_runs,
                       m.successful_runs ? total / static_cast<double>(m.successful_runs) : 0.0);
    }
    const bool any_success = report.methods.empty() ||
                             std::any_of(report.methods.begin(), report.methods.end(),
                                         [](const MethodMetrics& m) { return m.successful_runs > 0; });
    if (!any_success) {
        ctx.log().error("every run failed");
        return kExitNumerical;
    }
    io::OutputSet outputs = io::study_outputs(report);
    if (const io::Json* timing = io::optional_field(ctx.config(), "write_timing");
        timing && io::as_bool(*timing, "write_timing")) {
        outputs.add("timing.json", io::dump(io::timing_json(report)));
    }
    ctx.commit(outputs);
    return kExitOk;
}

inline int fit(const Context& ctx) {
    const io::Json& input = io::require_field(ctx.config(), "input", "");
    const Matrix u = io::read_matrix_csv(ctx.resolve(io::field_value(input, "u", "input", io::as_string)));
    const Matrix outcomes =
        io::read_matrix_csv(ctx.resolve(io::field_value(input, "outcomes", "input", io::as_string)));
    Matrix w;
    const io::Json& dims = io::require_field(ctx.config(), "spec", "");
    ModelSpec spec;
    spec.kg = io::field_value(dims, "kg", "spec", io::as_count);
    spec.kf = io::field_value(dims, "kf", "spec", io::as_count);
    spec.t = io::field_value(dims, "t", "spec", io::as_count);
    spec.pu = static_cast<std::size_t>(u.cols());
    spec.n = static_cast<std::size_t>(u.rows());
    if (const io::Json* wpath = io::optional_field(input, "w")) {
        w = io::read_matrix_csv(ctx.resolve(io::as_string(*wpath, "input.w")));
    } else {
        w = Matrix(u.rows() * static_cast<Eigen::Index>(spec.t), 0);
    }
    spec.pw = static_cast<std::size_t>(w.cols());
    try {
        spec.validate();
    } catch (const Error& e) {
        throw io::SchemaError("spec", e.what());
    }
    if (outcomes.rows() != u.rows() || outcomes.cols() != static_cast<Eigen::Index>(spec.p())) {
        throw io::SchemaError("input.outcomes", "expected " + std::to_string(spec.n) + " rows and " +
                                                    std::to_string(spec.p()) + " columns (kg + kf * t)");
    }
    if (w.rows() != u.rows() * static_cast<Eigen::Index>(spec.t)) {
        throw io::SchemaError("input.w", "expected N * t = " + std::to_string(spec.n * spec.t) + " rows");
    }
    auto [options, policy] = io::fit_options_from_json(io::optional_field(ctx.config(), "fit_options"), "fit_options");
    try {
        policy.validate(spec.p());
    } catch (const Error& e) {
        throw io::SchemaError("fit_options.policy", e.what());
    }
    options.threads = ctx.options().threads;

    const auto ident = validate_identifiability(u, w);
    if (!ident.ok) {
        throw IdentifiabilityError("design rank: U " + std::to_string(ident.u_rank) + ", (U_T, W) " +
                                   std::to_string(ident.uw_rank));
    }
    const Design design(u, w, spec);
    ctx.log().info("fitting p = {}, N = {}, {} coefficients", spec.p(), spec.n, spec.coefficient_count());
    const FitResult result = fit_iterative(outcomes, design, policy, options);
    ctx.log().info("{} after {} iterations", result.converged ? "converged" : "not converged", result.iterations);
    if (!result.converged) {
        ctx.log().error("no convergence within n_iter = {}", options.n_iter);
        return kExitNumerical;
    }
    const WaldReport wald = wald_tests(result, design);

    io::OutputSet outputs;
    outputs.add("report.json", io::dump(io::fit_json(result)));
    outputs.add("wald.csv", io::wald_csv(wald));
    outputs.add("sigma_hat.csv", io::matrix_csv(result.sigma_hat));
    if (result.precision) {
        outputs.add("cholesky_l.csv", io::matrix_csv(result.precision->factors.l));
        outputs.add("cholesky_d.csv", io::matrix_csv(result.precision->factors.d.transpose()));
        outputs.add("support.json", io::dump(io::support_json(result.precision->support)));
    }
    ctx.commit(outputs);
    return kExitOk;
}

inline int verify(const Context& ctx) {
    const io::Json& v = io::require_field(ctx.config(), "verify", "");
    VerificationOptions opts;
    opts.instances = io::field_or<std::size_t>(v, "instances", "verify", opts.instances, io::as_count);
    opts.tol = io::field_or<double>(v, "tol", "verify", opts.tol, io::as_number);
    opts.seed = io::field_or<std::uint64_t>(v, "seed", "verify", opts.seed, io::as_unsigned);
    opts.max_kg = io::field_or<std::size_t>(v, "max_kg", "verify", opts.max_kg, io::as_count);
    opts.max_kf = io::field_or<std::size_t>(v, "max_kf", "verify", opts.max_kf, io::as_count);
    opts.max_t = io::field_or<std::size_t>(v, "max_t", "verify", opts.max_t, io::as_count);
    opts.disjoint = io::field_or<bool>(v, "disjoint", "verify", opts.disjoint, io::as_bool);
    if (!(opts.tol >= 0.0)) {
        throw io::SchemaError("verify.tol", "must be non-negative");
    }
    if (ctx.options().seed) {
        opts.seed = *ctx.options().seed;
    }
    opts.threads = ctx.options().threads;
    const VerificationSummary summary = verify_random_suite(opts);
    ctx.log().info("{} of {} instances ok, worst relative violation {:.3g}", summary.ok_count, summary.instances,
                   summary.worst_violation);
    io::OutputSet outputs;
    outputs.add("report.json", io::dump(io::verification_json(summary)));
    ctx.commit(outputs);
    return summary.ok_count == summary.instances ? kExitOk : kExitNumerical;
}

inline int pca(const Context& ctx) {
    const io::Json& input = io::require_field(ctx.config(), "input", "");
    const io::Json& settings = io::require_field(ctx.config(), "pca", "");
    Matrix data = io::read_matrix_csv(ctx.resolve(io::field_value(input, "data", "input", io::as_string)));
    const std::size_t k = io::field_value(settings, "k", "pca", io::as_count);
    const std::string mode = io::field_or<std::string>(settings, "mode", "pca", "empirical", io::as_string);
    if (mode != "empirical" && mode != "functional") {
        throw io::SchemaError("pca.mode", "expected empirical or functional");
    }
    if (mode == "empirical" && io::field_or<bool>(settings, "momenta", "pca", false, io::as_bool)) {
        MomentaMatrix{data}.validate();
    }
    if (const io::Json* cov = io::optional_field(input, "covariates")) {
        const Matrix covariates = io::read_matrix_csv(ctx.resolve(io::as_string(*cov, "input.covariates")));
        data = pre_residualize(data, covariates);
    }
    const PcBasis basis = mode == "empirical" ? empirical_pca(data, k) : fpca_flat(data, k);
    io::OutputSet outputs;
    outputs.add("report.json", io::dump(io::Json{{"mode", mode},
                                                 {"k", k},
                                                 {"explained", io::vector_json(basis.explained)},
                                                 {"mean", io::vector_json(basis.mean)}}));
    outputs.add("components.csv", io::matrix_csv(basis.components, "pc"));
    outputs.add("scores.csv", io::matrix_csv(basis.scores, "pc"));
    ctx.commit(outputs);
    return kExitOk;
}

}  // namespace detail

/// Runs one command and maps failures to exit codes: 1 for unreadable or
/// invalid input, 2 for numerical and convergence failures. Nothing is
/// written unless the command succeeds as a whole.
inline int run(const Options& opts, spdlog::logger& log) {
    try {
        detail::Context ctx(opts, io::read_json(opts.config), log);
        if (opts.command == "simulate") return detail::simulate(ctx);
        if (opts.command == "fit") return detail::fit(ctx);
        if (opts.command == "verify") return detail::verify(ctx);
        if (opts.command == "pca") return detail::pca(ctx);
        log.error("unknown command '{}'", opts.command);
        return kExitValidation;
    } catch (const Error& e) {
        log.error("{}", e.what());
        return e.kind() == Error::Kind::validation ? kExitValidation : kExitNumerical;
    } catch (const std::filesystem::filesystem_error& e) {
        log.error("{}", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        log.error("internal error: {}", e.what());
        return kExitNumerical;
    }
}

inline int run(const Options& opts) { return run(opts, *make_logger()); }

}  // namespace structmix::cli
