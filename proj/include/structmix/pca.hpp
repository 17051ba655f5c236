#pragma once

#include <algorithm>
#include <cstddef>
#include <string>

#include "structmix/linalg.hpp"

namespace structmix {

/// N x 3d matrix of initial momenta; row i is the column-wise vectorization
/// of subject i's d x 3 momenta.
struct MomentaMatrix {
    Matrix values;

    void validate() const {
        if (values.cols() % 3 != 0) {
            throw DimensionError("momenta matrix column count must be divisible by 3");
        }
    }
};

struct PcBasis {
    Matrix components;  ///< orthonormal columns
    Matrix scores;      ///< centered data projected on the components
    Vector explained;   ///< variance shares, non-increasing
    Vector mean;        ///< the centering vector (one entry per data column)
};

/// Projects data onto the orthogonal complement of the covariates' column space.
inline Matrix pre_residualize(const Eigen::Ref<const Matrix>& data, const Eigen::Ref<const Matrix>& covariates) {
    if (data.rows() != covariates.rows()) {
        throw DimensionError("data and covariates must have the same number of rows");
    }
    linalg::require_finite(data, "data");
    linalg::require_finite(covariates, "covariates");
    if (covariates.cols() == 0) {
        return data;
    }
    Eigen::ColPivHouseholderQR<Matrix> qr(covariates);
    qr.setThreshold(static_cast<double>(std::max(covariates.rows(), covariates.cols())) *
                    Eigen::NumTraits<double>::epsilon());
    if (qr.rank() < covariates.cols()) {
        throw IdentifiabilityError("covariates are rank deficient (rank " + std::to_string(qr.rank()) + " of " +
                                   std::to_string(covariates.cols()) + ")");
    }
    const Matrix q = qr.householderQ() * Matrix::Identity(covariates.rows(), covariates.cols());
    return data - q * (q.transpose() * data);
}

namespace detail {

inline PcBasis centered_pca(const Eigen::Ref<const Matrix>& data, std::size_t k) {
    linalg::require_finite(data, "data");
    const auto rows = static_cast<std::size_t>(data.rows());
    const auto cols = static_cast<std::size_t>(data.cols());
    if (k < 1 || rows < 2 || k > std::min(rows - 1, cols)) {
        throw ParameterError("number of components " + std::to_string(k) + " must be in [1, min(rows-1, cols)]");
    }
    PcBasis basis;
    basis.mean = data.colwise().mean().transpose();
    const Matrix centered = data.rowwise() - basis.mean.transpose();
    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
    const Vector s2 = svd.singularValues().cwiseAbs2();
    const double total = s2.sum();
    const auto kk = static_cast<Eigen::Index>(k);
    basis.components = svd.matrixV().leftCols(kk);
    // Largest-magnitude entry of each component is positive.
    for (Eigen::Index c = 0; c < kk; ++c) {
        Eigen::Index arg = 0;
        basis.components.col(c).cwiseAbs().maxCoeff(&arg);
        if (basis.components(arg, c) < 0.0) {
            basis.components.col(c) *= -1.0;
        }
    }
    basis.explained = total > 0.0 ? Vector(s2.head(kk) / total) : Vector(Vector::Zero(kk));
    basis.scores = centered * basis.components;
    return basis;
}

}  // namespace detail

/// PCA of column-centered data via a thin SVD.
inline PcBasis empirical_pca(const Eigen::Ref<const Matrix>& data, std::size_t k) {
    return detail::centered_pca(data, k);
}

/// Functional PCA of time-stacked data ((N*T) x d, subject index fastest)
/// with one grand mean over all N*T rows. This is the unsmoothed limit of
/// the rank-one deflation objective, so it reduces to a truncated SVD.
inline PcBasis fpca_flat(const Eigen::Ref<const Matrix>& data, std::size_t k) {
    return detail::centered_pca(data, k);
}

}  // namespace structmix
