#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "structmix/errors.hpp"

namespace structmix {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

namespace linalg {

inline double max_abs(const Eigen::Ref<const Matrix>& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

// max|M - M^T| <= 1e-9 * (1 + max|M|)
inline bool is_symmetric(const Eigen::Ref<const Matrix>& m) {
    if (m.rows() != m.cols()) {
        return false;
    }
    return max_abs(m - m.transpose()) <= 1e-9 * (1.0 + max_abs(m));
}

inline Matrix symmetrized(const Eigen::Ref<const Matrix>& m) { return 0.5 * (m + m.transpose()); }

inline void require_square(const Eigen::Ref<const Matrix>& m, const std::string& name) {
    if (m.rows() != m.cols()) {
        throw DimensionError(name + " must be square, got " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()));
    }
}

inline void require_finite(const Eigen::Ref<const Matrix>& m, const std::string& name) {
    if (!m.allFinite()) {
        throw ValidityError(name + " has non-finite entries");
    }
}

/// Checks symmetry within tolerance and returns the symmetrized matrix.
inline Matrix require_symmetric(const Eigen::Ref<const Matrix>& m, const std::string& name) {
    require_square(m, name);
    require_finite(m, name);
    if (!is_symmetric(m)) {
        throw ValidityError(name + " is not symmetric");
    }
    return symmetrized(m);
}

/// Cholesky of a symmetric PD matrix; throws ValidityError otherwise.
inline Eigen::LLT<Matrix> require_pd(const Eigen::Ref<const Matrix>& m, const std::string& name) {
    Eigen::LLT<Matrix> llt(require_symmetric(m, name));
    if (llt.info() != Eigen::Success) {
        throw ValidityError(name + " is not positive definite");
    }
    const auto diag = llt.matrixLLT().diagonal();
    if (!(diag.array() > 0.0).all() || !diag.allFinite()) {
        throw ValidityError(name + " is not positive definite");
    }
    return llt;
}

inline bool is_pd(const Eigen::Ref<const Matrix>& m) {
    if (m.rows() != m.cols() || !m.allFinite()) {
        return false;
    }
    Eigen::LLT<Matrix> llt(symmetrized(m));
    return llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all();
}

inline double min_eigenvalue(const Eigen::Ref<const Matrix>& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(m), Eigen::EigenvaluesOnly);
    return eig.eigenvalues().minCoeff();
}

inline double log_det(const Eigen::LLT<Matrix>& llt) {
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace linalg
}  // namespace structmix
