#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "structmix/chol_regression.hpp"
#include "structmix/errors.hpp"
#include "structmix/mixed_model.hpp"
#include "structmix/pca.hpp"
#include "structmix/simulator.hpp"
#include "structmix/sparsity_oracle.hpp"
#include "structmix/structured_cov.hpp"

// JSON and CSV formats. Indices written to files (column headers j1..jp,
// support rows, pc_index, covariate_index, witnesses) are 1-based.
namespace structmix::io {

using Json = nlohmann::ordered_json;

// A file that cannot be read or written.
class FileError : public Error {
public:
    FileError(const std::filesystem::path& path, const std::string& what)
        : Error(Kind::validation, "'" + path.string() + "': " + what), path_(path) {}

    [[nodiscard]] const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

// A document that parses but violates the expected schema at `field`.
class SchemaError : public Error {
public:
    SchemaError(std::string field, const std::string& what)
        : Error(Kind::validation, "field '" + field + "': " + what), field_(std::move(field)) {}

    [[nodiscard]] const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        throw FileError(path, "no such file");
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FileError(path, "cannot open for reading");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

inline Json parse_json(const std::string& text, const std::string& source) {
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw SchemaError(source, std::string("invalid JSON: ") + e.what());
    }
}

inline Json read_json(const std::filesystem::path& path) { return parse_json(read_file(path), path.string()); }

/// Shortest decimal that round-trips the double.
inline std::string format_number(double x) {
    if (std::isnan(x)) {
        return "nan";
    }
    if (std::isinf(x)) {
        return x > 0 ? "inf" : "-inf";
    }
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

/// A set of named output files written together: every file goes to a
/// temporary name first and is renamed only after all writes succeeded.
class OutputSet {
public:
    void add(std::string name, std::string content) { files_.emplace_back(std::move(name), std::move(content)); }

    [[nodiscard]] const std::vector<std::pair<std::string, std::string>>& files() const { return files_; }

    /// Returns the written paths in insertion order.
    std::vector<std::filesystem::path> commit(const std::filesystem::path& dir) const {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec || !std::filesystem::is_directory(dir)) {
            throw FileError(dir, "cannot create output directory");
        }
        std::vector<std::filesystem::path> temps;
        auto cleanup = [&] {
            for (const auto& t : temps) {
                std::filesystem::remove(t, ec);
            }
        };
        for (const auto& [name, content] : files_) {
            const auto tmp = dir / ("." + name + ".tmp");
            temps.push_back(tmp);
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << content;
            out.close();
            if (!out) {
                cleanup();
                throw FileError(tmp, "cannot write");
            }
        }
        for (const auto& [name, content] : files_) {
            const auto target = dir / name;
            if (std::filesystem::exists(target, ec) && !std::filesystem::is_regular_file(target, ec)) {
                cleanup();
                throw FileError(target, "exists and is not a regular file");
            }
        }
        std::vector<std::filesystem::path> written;
        for (std::size_t i = 0; i < files_.size(); ++i) {
            const auto target = dir / files_[i].first;
            std::filesystem::rename(temps[i], target, ec);
            if (ec) {
                const std::string reason = ec.message();
                cleanup();
                for (const auto& w : written) std::filesystem::remove(w, ec);
                throw FileError(target, "cannot rename into place: " + reason);
            }
            written.push_back(target);
        }
        return written;
    }

private:
    std::vector<std::pair<std::string, std::string>> files_;
};

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// ---- schema helpers -------------------------------------------------------

inline std::string join_field(const std::string& path, const std::string& key) {
    return path.empty() ? key : path + "." + key;
}

inline const Json& require_field(const Json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object()) {
        throw SchemaError(path.empty() ? "<root>" : path, "expected an object");
    }
    const auto it = obj.find(key);
    if (it == obj.end()) {
        throw SchemaError(join_field(path, key), "missing required field");
    }
    return *it;
}

inline const Json* optional_field(const Json& obj, const std::string& key) {
    if (!obj.is_object()) {
        return nullptr;
    }
    const auto it = obj.find(key);
    return it == obj.end() || it->is_null() ? nullptr : &*it;
}

inline double as_number(const Json& j, const std::string& field) {
    if (!j.is_number()) {
        throw SchemaError(field, "expected a number");
    }
    return j.get<double>();
}

inline std::uint64_t as_unsigned(const Json& j, const std::string& field) {
    if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0)) {
        throw SchemaError(field, "expected a non-negative integer");
    }
    return j.get<std::uint64_t>();
}

inline std::size_t as_count(const Json& j, const std::string& field) {
    return static_cast<std::size_t>(as_unsigned(j, field));
}

inline bool as_bool(const Json& j, const std::string& field) {
    if (!j.is_boolean()) {
        throw SchemaError(field, "expected true or false");
    }
    return j.get<bool>();
}

inline std::string as_string(const Json& j, const std::string& field) {
    if (!j.is_string()) {
        throw SchemaError(field, "expected a string");
    }
    return j.get<std::string>();
}

inline Vector as_vector(const Json& j, const std::string& field) {
    if (!j.is_array()) {
        throw SchemaError(field, "expected an array of numbers");
    }
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        v(static_cast<Eigen::Index>(i)) = as_number(j[i], field + "[" + std::to_string(i) + "]");
    }
    return v;
}

/// Rectangular array of rows. An empty array is a 0 x 0 matrix.
inline Matrix as_matrix(const Json& j, const std::string& field) {
    if (!j.is_array()) {
        throw SchemaError(field, "expected an array of rows");
    }
    if (j.empty()) {
        return Matrix(0, 0);
    }
    const auto rows = static_cast<Eigen::Index>(j.size());
    Eigen::Index cols = -1;
    Matrix m;
    for (Eigen::Index r = 0; r < rows; ++r) {
        const std::string row_field = field + "[" + std::to_string(r) + "]";
        const Vector row = as_vector(j[static_cast<std::size_t>(r)], row_field);
        if (cols < 0) {
            cols = row.size();
            m.resize(rows, cols);
        } else if (row.size() != cols) {
            throw SchemaError(row_field, "rows must all have the same length");
        }
        m.row(r) = row.transpose();
    }
    return m;
}

template <typename Fn>
auto field_value(const Json& obj, const std::string& key, const std::string& path, Fn&& convert) {
    return convert(require_field(obj, key, path), join_field(path, key));
}

template <typename T, typename Fn>
T field_or(const Json& obj, const std::string& key, const std::string& path, T fallback, Fn&& convert) {
    const Json* j = optional_field(obj, key);
    return j ? static_cast<T>(convert(*j, join_field(path, key))) : fallback;
}

// ---- matrices as JSON / CSV -----------------------------------------------

inline Json matrix_json(const Eigen::Ref<const Matrix>& m) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            row.push_back(m(r, c));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Json vector_json(const Eigen::Ref<const Vector>& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        out.push_back(v(i));
    }
    return out;
}

/// Row-major CSV with header prefix1..prefixN.
inline std::string matrix_csv(const Eigen::Ref<const Matrix>& m, const std::string& prefix = "j") {
    std::string out;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        out += (c ? "," : "") + prefix + std::to_string(c + 1);
    }
    out += "\n";
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            if (c) out += ",";
            out += format_number(m(r, c));
        }
        out += "\n";
    }
    return out;
}

/// Parses a numeric CSV with one header line; the header fixes the column count.
inline Matrix parse_matrix_csv(const std::string& text, const std::string& source) {
    std::istringstream in(text);
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream row(s);
        while (std::getline(row, cell, ',')) {
            cells.push_back(cell);
        }
        if (!s.empty() && s.back() == ',') {
            cells.emplace_back();
        }
        return cells;
    };
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    if (!std::getline(in, line) || trim(line).empty()) {
        throw SchemaError(source, "missing CSV header line");
    }
    const std::size_t cols = split(trim(line)).size();
    std::vector<double> values;
    std::size_t rows = 0;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto cells = split(line);
        if (cells.size() != cols) {
            throw SchemaError(source + ":" + std::to_string(line_no),
                              "expected " + std::to_string(cols) + " values, found " + std::to_string(cells.size()));
        }
        for (const auto& raw : cells) {
            const std::string cell = trim(raw);
            double x = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), x);
            if (cell.empty() || res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(x)) {
                throw SchemaError(source + ":" + std::to_string(line_no), "'" + cell + "' is not a finite number");
            }
            values.push_back(x);
        }
        ++rows;
    }
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = values[r * cols + c];
        }
    }
    return m;
}

inline Matrix read_matrix_csv(const std::filesystem::path& path) {
    return parse_matrix_csv(read_file(path), path.string());
}

// ---- domain types -----------------------------------------------------------

inline Json spec_json(const ModelSpec& s) {
    return Json{{"kg", s.kg}, {"kf", s.kf}, {"t", s.t}, {"pu", s.pu}, {"pw", s.pw}, {"n", s.n}};
}

inline ModelSpec spec_from_json(const Json& j, const std::string& path) {
    ModelSpec s;
    s.kg = field_value(j, "kg", path, as_count);
    s.kf = field_value(j, "kf", path, as_count);
    s.t = field_value(j, "t", path, as_count);
    s.pu = field_value(j, "pu", path, as_count);
    s.pw = field_or<std::size_t>(j, "pw", path, 0, as_count);
    s.n = field_value(j, "n", path, as_count);
    try {
        s.validate();
    } catch (const Error& e) {
        throw SchemaError(path, e.what());
    }
    return s;
}

inline Json covariance_json(const StructuredCovariance& sigma, const ModelSpec& spec) {
    Json ff = Json::array();
    Json gf = Json::array();
    for (const auto& b : sigma.sigma_ff) ff.push_back(matrix_json(b));
    for (const auto& b : sigma.sigma_gf) gf.push_back(matrix_json(b));
    return Json{{"kg", spec.kg},         {"kf", spec.kf},   {"t", spec.t},
                {"sigma_gg", vector_json(sigma.sigma_gg)}, {"sigma_ff", ff}, {"sigma_gf", gf},
                {"sigma_eps2", sigma.sigma_eps2}};
}

/// Reads the covariance document; `spec` (if given) must agree with the
/// embedded kg/kf/t. Cross blocks of a kg x 0 shape are allowed to be [].
inline std::pair<StructuredCovariance, ModelSpec> covariance_from_json(const Json& j, const std::string& path,
                                                                     std::optional<ModelSpec> spec = std::nullopt) {
    ModelSpec s = spec.value_or(ModelSpec{});
    const std::size_t kg = field_value(j, "kg", path, as_count);
    const std::size_t kf = field_value(j, "kf", path, as_count);
    const std::size_t t = field_value(j, "t", path, as_count);
    if (spec && (kg != s.kg || kf != s.kf || t != s.t)) {
        throw SchemaError(path, "kg/kf/t disagree with the model dimensions");
    }
    s.kg = kg;
    s.kf = kf;
    s.t = t;
    StructuredCovariance sigma;
    sigma.sigma_gg = field_value(j, "sigma_gg", path, as_vector);
    sigma.sigma_eps2 = field_value(j, "sigma_eps2", path, as_number);
    const auto& ff = require_field(j, "sigma_ff", path);
    const auto& gf = require_field(j, "sigma_gf", path);
    if (!ff.is_array() || !gf.is_array()) {
        throw SchemaError(join_field(path, ff.is_array() ? "sigma_gf" : "sigma_ff"), "expected an array of matrices");
    }
    for (std::size_t k = 0; k < ff.size(); ++k) {
        sigma.sigma_ff.push_back(as_matrix(ff[k], join_field(path, "sigma_ff") + "[" + std::to_string(k) + "]"));
    }
    for (std::size_t k = 0; k < gf.size(); ++k) {
        sigma.sigma_gf.push_back(as_matrix(gf[k], join_field(path, "sigma_gf") + "[" + std::to_string(k) + "]"));
    }
    try {
        validate_blocks(sigma, s);
    } catch (const Error& e) {
        throw SchemaError(path, e.what());
    }
    return {sigma, s};
}

inline Json policy_json(const PenaltyPolicy& p) {
    Json j;
    switch (p.mode) {
        case PenaltyMode::target_sparsity:
            j["mode"] = "target_sparsity";
            if (p.tau) j["tau"] = *p.tau;
            break;
        case PenaltyMode::fixed_lambda:
            j["mode"] = "fixed_lambda";
            j["lambda"] = vector_json(*p.lambda);
            break;
        case PenaltyMode::cross_validation:
            j["mode"] = "cross_validation";
            j["cv_folds"] = p.cv_folds;
            break;
    }
    return j;
}

inline PenaltyPolicy policy_from_json(const Json& j, const std::string& path) {
    const std::string mode = field_or<std::string>(j, "mode", path, "target_sparsity", as_string);
    PenaltyPolicy p;
    if (mode == "target_sparsity") {
        if (const Json* tau = optional_field(j, "tau")) {
            const std::string field = join_field(path, "tau");
            if (!tau->is_array()) throw SchemaError(field, "expected an array of counts");
            std::vector<std::size_t> budgets;
            for (std::size_t i = 0; i < tau->size(); ++i) {
                budgets.push_back(as_count((*tau)[i], field + "[" + std::to_string(i) + "]"));
            }
            p = PenaltyPolicy::target_sparsity(std::move(budgets));
        }
    } else if (mode == "fixed_lambda") {
        const Json& lambda = require_field(j, "lambda", path);
        const std::string field = join_field(path, "lambda");
        p = lambda.is_array() ? PenaltyPolicy::fixed_lambda(as_vector(lambda, field))
                              : PenaltyPolicy::fixed_lambda(as_number(lambda, field));
    } else if (mode == "cross_validation") {
        p = PenaltyPolicy::cross_validation(field_or<std::size_t>(j, "cv_folds", path, 5, as_count));
    } else {
        throw SchemaError(join_field(path, "mode"), "expected target_sparsity, fixed_lambda or cross_validation");
    }
    return p;
}

inline Json fit_options_json(const FitOptions& o, const PenaltyPolicy& policy) {
    return Json{{"c_b", o.c_b}, {"c_sigma", o.c_sigma}, {"n_iter", o.n_iter}, {"policy", policy_json(policy)}};
}

inline std::pair<FitOptions, PenaltyPolicy> fit_options_from_json(const Json* j, const std::string& path) {
    FitOptions o;
    PenaltyPolicy policy;
    if (!j) {
        return {o, policy};
    }
    o.c_b = field_or<double>(*j, "c_b", path, o.c_b, as_number);
    o.c_sigma = field_or<double>(*j, "c_sigma", path, o.c_sigma, as_number);
    o.n_iter = field_or<std::size_t>(*j, "n_iter", path, o.n_iter, as_count);
    if (!(o.c_b > 0.0)) throw SchemaError(join_field(path, "c_b"), "must be positive");
    if (!(o.c_sigma > 0.0)) throw SchemaError(join_field(path, "c_sigma"), "must be positive");
    if (o.n_iter < 2) throw SchemaError(join_field(path, "n_iter"), "must be >= 2");
    if (const Json* pj = optional_field(*j, "policy")) {
        policy = policy_from_json(*pj, join_field(path, "policy"));
    }
    return {o, policy};
}

/// StudyConfig document. `truth` is optional and defaults to reference_truth;
/// a partial truth object may override "rho", "cross" and "sigma_eps" of the
/// default or give every matrix explicitly.
inline StudyConfig study_from_json(const Json& j, const std::string& path) {
    StudyConfig c;
    c.spec = spec_from_json(require_field(j, "spec", path), join_field(path, "spec"));
    c.runs = field_or<std::size_t>(j, "runs", path, 20, as_count);
    c.seed = field_or<std::uint64_t>(j, "seed", path, 0, as_unsigned);
    if (c.runs < 1) throw SchemaError(join_field(path, "runs"), "must be >= 1");

    if (const Json* methods = optional_field(j, "methods")) {
        const std::string field = join_field(path, "methods");
        if (!methods->is_array()) throw SchemaError(field, "expected an array of method names");
        c.methods.clear();
        for (std::size_t i = 0; i < methods->size(); ++i) {
            const std::string item = field + "[" + std::to_string(i) + "]";
            try {
                c.methods.push_back(method_from_string(as_string((*methods)[i], item)));
            } catch (const ParameterError& e) {
                throw SchemaError(item, e.what());
            }
        }
    }

    const std::string truth_path = join_field(path, "truth");
    const Json* truth = optional_field(j, "truth");
    if (truth && optional_field(*truth, "covariance")) {
        c.truth.alpha_g = field_value(*truth, "alpha_g", truth_path, as_matrix);
        c.truth.alpha_f = field_value(*truth, "alpha_f", truth_path, as_matrix);
        c.truth.beta = c.spec.pw == 0 ? Matrix(c.spec.kf, 0) : field_value(*truth, "beta", truth_path, as_matrix);
        c.truth.covariance = covariance_from_json(require_field(*truth, "covariance", truth_path),
                                                  join_field(truth_path, "covariance"), c.spec)
                                 .first;
    } else {
        const double rho = truth ? field_or<double>(*truth, "rho", truth_path, reference_study::kRho, as_number) : reference_study::kRho;
        const double cross = truth ? field_or<double>(*truth, "cross", truth_path, reference_study::kCrossCorrelation, as_number)
                                   : reference_study::kCrossCorrelation;
        const double eps =
            truth ? field_or<double>(*truth, "sigma_eps", truth_path, reference_study::kSigmaEps, as_number) : reference_study::kSigmaEps;
        try {
            c.truth = reference_truth(c.spec, rho, cross, eps);
        } catch (const Error& e) {
            throw SchemaError(truth_path, e.what());
        }
    }

    if (const Json* est = optional_field(j, "estimated_pcs")) {
        const std::string ep = join_field(path, "estimated_pcs");
        c.estimated_pcs.enabled = field_or<bool>(*est, "enabled", ep, true, as_bool);
        c.estimated_pcs.geometric_points =
            field_or<std::size_t>(*est, "geometric_points", ep, c.estimated_pcs.geometric_points, as_count);
        c.estimated_pcs.functional_points =
            field_or<std::size_t>(*est, "functional_points", ep, c.estimated_pcs.functional_points, as_count);
        c.estimated_pcs.noise_sd = field_or<double>(*est, "noise_sd", ep, c.estimated_pcs.noise_sd, as_number);
    }
    std::tie(c.fit, c.policy) = fit_options_from_json(optional_field(j, "fit_options"), join_field(path, "fit_options"));
    try {
        c.validate();
    } catch (const Error& e) {
        throw SchemaError(path, e.what());
    }
    return c;
}

inline Json study_json(const StudyConfig& c) {
    Json methods = Json::array();
    for (Method m : c.methods) methods.push_back(to_string(m));
    return Json{{"spec", spec_json(c.spec)},
                {"runs", c.runs},
                {"seed", c.seed},
                {"methods", methods},
                {"truth",
                 {{"alpha_g", matrix_json(c.truth.alpha_g)},
                  {"alpha_f", matrix_json(c.truth.alpha_f)},
                  {"beta", matrix_json(c.truth.beta)},
                  {"covariance", covariance_json(c.truth.covariance, c.spec)}}},
                {"estimated_pcs",
                 {{"enabled", c.estimated_pcs.enabled},
                  {"geometric_points", c.estimated_pcs.geometric_points},
                  {"functional_points", c.estimated_pcs.functional_points},
                  {"noise_sd", c.estimated_pcs.noise_sd}}},
                {"fit_options", fit_options_json(c.fit, c.policy)}};
}

inline const char* group_name(std::size_t g) { return to_string(static_cast<CoefficientGroup>(g)); }

/// Report without wall-clock times (those go to timing_json).
inline Json metrics_json(const MetricsReport& r) {
    Json methods = Json::array();
    for (const auto& m : r.methods) {
        Json fixed;
        for (std::size_t g = 0; g < kGroups; ++g) fixed[group_name(g)] = m.fixed_rmse[g];
        Json per_run = Json::array();
        for (const auto& run : m.run_fixed_rmse) per_run.push_back(Json::array({run[0], run[1], run[2]}));
        Json converged = Json::array();
        for (bool b : m.converged) converged.push_back(b);
        methods.push_back(Json{{"method", to_string(m.method)},
                               {"source", m.source},
                               {"successful_runs", m.successful_runs},
                               {"fixed_rmse", fixed},
                               {"run_fixed_rmse", per_run},
                               {"cov_rmse_median", m.cov_rmse_median},
                               {"iterations", m.iterations},
                               {"converged", converged}});
    }
    Json failures = Json::array();
    for (const auto& f : r.failures) {
        failures.push_back(
            Json{{"run", f.run}, {"method", to_string(f.method)}, {"source", f.source}, {"message", f.message}});
    }
    Json condition = Json::array();
    for (double c : r.design_condition) condition.push_back(std::isfinite(c) ? Json(c) : Json(nullptr));
    return Json{{"spec", spec_json(r.spec)}, {"runs", r.runs},          {"seed", r.seed},
                {"methods", methods},        {"failures", failures}, {"design_condition", condition}};
}

inline Json timing_json(const MetricsReport& r) {
    Json out = Json::array();
    for (const auto& m : r.methods) {
        out.push_back(Json{{"method", to_string(m.method)}, {"source", m.source}, {"seconds", m.seconds}});
    }
    return out;
}

inline std::string fixed_rmse_csv(const MetricsReport& r) {
    std::string out = "method,source,group,rmse,runs\n";
    for (const auto& m : r.methods) {
        for (std::size_t g = 0; g < kGroups; ++g) {
            out += std::string(to_string(m.method)) + "," + m.source + "," + group_name(g) + "," +
                   format_number(m.fixed_rmse[g]) + "," + std::to_string(m.successful_runs) + "\n";
        }
    }
    return out;
}

/// report.json, fixed_rmse.csv and one covariance grid per method/source.
/// cov_rmse.csv holds the first method's grid; the others are named
/// cov_rmse_<method>_<source>.csv. An empty method list yields report.json only.
inline OutputSet study_outputs(const MetricsReport& r) {
    OutputSet out;
    out.add("report.json", dump(metrics_json(r)));
    if (r.methods.empty()) {
        return out;
    }
    out.add("fixed_rmse.csv", fixed_rmse_csv(r));
    for (std::size_t i = 0; i < r.methods.size(); ++i) {
        const auto& m = r.methods[i];
        const std::string name =
            i == 0 ? "cov_rmse.csv" : "cov_rmse_" + std::string(to_string(m.method)) + "_" + m.source + ".csv";
        out.add(name, matrix_csv(m.cov_rmse));
    }
    return out;
}

inline std::string wald_csv(const WaldReport& report) {
    std::string out = "group,pc_index,covariate_index,estimate,se,z,p\n";
    for (const auto& row : report.rows) {
        out += std::string(to_string(row.label.group)) + "," + std::to_string(row.label.pc + 1) + "," +
               std::to_string(row.label.covariate + 1) + "," + format_number(row.estimate) + "," +
               format_number(row.se) + "," + format_number(row.z) + "," + format_number(row.p_value) + "\n";
    }
    return out;
}

inline Json support_json(const std::vector<std::vector<std::size_t>>& support) {
    Json out = Json::array();
    for (std::size_t j = 0; j < support.size(); ++j) {
        Json cols = Json::array();
        for (std::size_t c : support[j]) cols.push_back(c + 1);
        out.push_back(Json{{"row", j + 1}, {"cols", cols}});
    }
    return out;
}

inline Json fit_json(const FitResult& fit) {
    const ModelSpec& s = fit.b_hat.spec;
    Matrix alpha_g(s.pu, s.kg), alpha_f(s.kf, s.pu), beta(s.kf, s.pw);
    for (std::size_t g = 0; g < s.kg; ++g)
        for (std::size_t c = 0; c < s.pu; ++c) alpha_g(c, g) = fit.b_hat.alpha_g(g, c);
    for (std::size_t k = 0; k < s.kf; ++k) {
        for (std::size_t c = 0; c < s.pu; ++c) alpha_f(k, c) = fit.b_hat.alpha_f(k, c);
        for (std::size_t c = 0; c < s.pw; ++c) beta(k, c) = fit.b_hat.beta(k, c);
    }
    Json trace = Json::array();
    for (const auto& t : fit.trace) trace.push_back(Json{{"delta_b", t.delta_b}, {"delta_kl", t.delta_kl}});
    return Json{{"spec", spec_json(s)},
                {"converged", fit.converged},
                {"iterations", fit.iterations},
                {"trace", trace},
                {"alpha_g", matrix_json(alpha_g)},
                {"alpha_f", matrix_json(alpha_f)},
                {"beta", matrix_json(beta)}};
}

inline Json verification_json(const VerificationSummary& s) {
    Json witness = s.worst_row < 0 ? Json(nullptr)
                                   : Json{{"instance", s.worst_instance + 1},
                                          {"row", s.worst_row + 1},
                                          {"col", s.worst_col + 1}};
    return Json{{"instances", s.instances},
                {"ok_count", s.ok_count},
                {"worst_violation", s.worst_violation},
                {"worst_witness", witness}};
}

}  // namespace structmix::io
