#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "structmix/chol_regression.hpp"
#include "structmix/random.hpp"
#include "structmix/simulator.hpp"

using namespace structmix;

namespace {

// Columns 0..2 orthonormal, column 3 = 3 q0 + 2 q1 + q2 + 0.5 q3.
ResidualMatrix orthonormal_instance() {
    Rng rng(5);
    Eigen::HouseholderQR<Matrix> qr(gaussian_matrix(10, 4, rng));
    const Matrix q = qr.householderQ() * Matrix::Identity(10, 4);
    Matrix data(10, 4);
    data.leftCols(3) = q.leftCols(3);
    data.col(3) = 3.0 * q.col(0) + 2.0 * q.col(1) + q.col(2) + 0.5 * q.col(3);
    return {data};
}

Matrix sample_rows(const Matrix& sigma, Eigen::Index n, Rng& rng) {
    const Eigen::LLT<Matrix> llt(sigma);
    return (Matrix(llt.matrixL()) * gaussian_matrix(sigma.rows(), n, rng)).transpose();
}

}  // namespace

TEST(LassoRow, ZeroLambdaIsLeastSquares) {
    Rng rng(1);
    const ResidualMatrix r{gaussian_matrix(40, 5, rng)};
    const LassoResult fit = lasso_row(r, 4, 0.0);
    const Matrix x = r.values.leftCols(4);
    const Vector normal = (x.transpose() * x).ldlt().solve(x.transpose() * r.values.col(4));
    EXPECT_LT((fit.coefficients - normal).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(LassoRow, SinglePredictorSoftThreshold) {
    Matrix data(2, 2);
    data << 1, 1, 0, 3;  // |x| = 1, x.y = 1
    const LassoResult fit = lasso_row({data}, 1, 1.0);
    ASSERT_EQ(fit.coefficients.size(), 1);
    EXPECT_NEAR(fit.coefficients(0), 0.5, 1e-15);
    EXPECT_TRUE(fit.converged);
}

TEST(LassoRow, OrthonormalDesignMatchesSoftThreshold) {
    const ResidualMatrix r = orthonormal_instance();
    const Vector xy = r.values.leftCols(3).transpose() * r.values.col(3);
    for (double lambda : {0.5, 1.0, 2.5, 3.9, 5.0, 7.0}) {
        const LassoResult fit = lasso_row(r, 3, lambda);
        for (Eigen::Index k = 0; k < 3; ++k) {
            EXPECT_NEAR(fit.coefficients(k), detail::soft_threshold(xy(k), lambda / 2.0), 1e-10) << lambda;
        }
    }
}

TEST(LassoRow, LambdaMaxZeroesEverything) {
    Rng rng(2);
    const ResidualMatrix r{gaussian_matrix(30, 6, rng)};
    const Vector xy = r.values.leftCols(5).transpose() * r.values.col(5);
    const double lambda_max = 2.0 * xy.cwiseAbs().maxCoeff();
    EXPECT_EQ(detail::count_nonzeros(lasso_row(r, 5, lambda_max).coefficients), 0u);
    EXPECT_EQ(detail::count_nonzeros(lasso_row(r, 5, 10.0 * lambda_max).coefficients), 0u);
    EXPECT_GT(detail::count_nonzeros(lasso_row(r, 5, 0.99 * lambda_max).coefficients), 0u);
}

TEST(LassoRow, FirstColumnHasNoPredictors) {
    Rng rng(3);
    const ResidualMatrix r{gaussian_matrix(5, 3, rng)};
    EXPECT_EQ(lasso_row(r, 0, 1.0).coefficients.size(), 0);
}

TEST(LassoRow, RejectsBadInput) {
    Rng rng(4);
    ResidualMatrix r{gaussian_matrix(5, 3, rng)};
    EXPECT_THROW(lasso_row(r, 1, -1.0), ParameterError);
    EXPECT_THROW(lasso_row(r, 3, 1.0), ParameterError);
    r.values(2, 1) = std::nan("");
    EXPECT_THROW(lasso_row(r, 1, 1.0), ValidityError);
}

TEST(LambdaForTarget, OrthonormalThreeTwoOne) {
    const TargetResult res = lambda_for_target(orthonormal_instance(), 3, 2);
    EXPECT_GT(res.lambda, 2.0);
    EXPECT_LT(res.lambda, 4.0);
    EXPECT_EQ(res.nonzeros, 2u);
    EXPECT_NE(res.coefficients(0), 0.0);
    EXPECT_NE(res.coefficients(1), 0.0);
    EXPECT_EQ(res.coefficients(2), 0.0);
}

TEST(LambdaForTarget, ExactSupportSizes) {
    const ResidualMatrix r = orthonormal_instance();
    for (std::size_t tau = 0; tau <= 3; ++tau) {
        EXPECT_EQ(lambda_for_target(r, 3, tau).nonzeros, tau);
    }
}

TEST(LambdaForTarget, FullBudgetIsLeastSquares) {
    Rng rng(6);
    const ResidualMatrix r{gaussian_matrix(25, 5, rng)};
    const TargetResult res = lambda_for_target(r, 4, 4);
    EXPECT_EQ(res.lambda, 0.0);
    EXPECT_LT((res.coefficients - lasso_row(r, 4, 0.0).coefficients).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LambdaForTarget, ZeroBudgetGivesZeroVector) {
    Rng rng(7);
    const ResidualMatrix r{gaussian_matrix(25, 5, rng)};
    const TargetResult res = lambda_for_target(r, 4, 0);
    EXPECT_EQ(res.nonzeros, 0u);
    const Vector xy = r.values.leftCols(4).transpose() * r.values.col(4);
    EXPECT_GE(res.lambda, 2.0 * xy.cwiseAbs().maxCoeff());
}

TEST(LambdaForTarget, RejectsBudgetAbovePredictors) {
    Rng rng(8);
    EXPECT_THROW(lambda_for_target({gaussian_matrix(10, 4, rng)}, 2, 3), ParameterError);
}

TEST(DefaultTau, FollowsIndexMap) {
    const ModelSpec spec{5, 5, 3, 2, 2, 200};
    EXPECT_FALSE(default_tau(spec, 2).has_value());
    EXPECT_EQ(default_tau(spec, spec.functional_column(1, 1)), std::optional<std::size_t>(6));
    EXPECT_EQ(default_tau(spec, spec.functional_column(0, 0)), std::optional<std::size_t>(5));
    EXPECT_EQ(spec.functional_column(1, 1), 9u);
}

TEST(PenaltyPolicy, ValidatesFields) {
    EXPECT_THROW(PenaltyPolicy::target_sparsity({0, 1}).validate(3), ParameterError);
    EXPECT_THROW(PenaltyPolicy::target_sparsity({0, 2, 1}).validate(3), ParameterError);
    EXPECT_NO_THROW(PenaltyPolicy::target_sparsity({0, 1, 2}).validate(3));
    EXPECT_THROW(PenaltyPolicy::fixed_lambda(-1.0).validate(3), ParameterError);
    EXPECT_THROW(PenaltyPolicy::fixed_lambda(Vector::Ones(2)).validate(3), ParameterError);
    EXPECT_THROW(PenaltyPolicy::cross_validation(1).validate(3), ParameterError);
    PenaltyPolicy mixed = PenaltyPolicy::fixed_lambda(1.0);
    mixed.tau = std::vector<std::size_t>{0, 0, 0};
    EXPECT_THROW(mixed.validate(3), ParameterError);
}

TEST(EstimatePrecision, UnpenalizedMatchesDenseFactorWithAlignedDenominator) {
    const ModelSpec spec{2, 2, 3, 1, 0, 60};
    Rng rng(9);
    const Matrix sigma = random_pd(static_cast<Eigen::Index>(spec.p()), rng);
    const ResidualMatrix r{sample_rows(sigma, 60, rng)};
    const CholeskyEstimate est = estimate_precision(r, spec, PenaltyPolicy::fixed_lambda(0.0));
    const CholeskyFactors dense = dense_cholesky_precision(r.values.transpose() * r.values / 60.0);
    EXPECT_LT(linalg::max_abs(est.factors.l - dense.l), 1e-8);
    for (Eigen::Index j = 0; j < dense.d.size(); ++j) {
        const double aligned = est.factors.d(j) * static_cast<double>(60 - j) / 60.0;
        EXPECT_NEAR(aligned, dense.d(j), 1e-8 * dense.d(j));
    }
}

TEST(EstimatePrecision, FirstRowIsSecondMoment) {
    const ModelSpec spec{1, 1, 2, 1, 0, 20};
    Rng rng(10);
    const ResidualMatrix r{gaussian_matrix(20, 3, rng)};
    const CholeskyEstimate est = estimate_precision(r, spec, PenaltyPolicy::target_sparsity());
    EXPECT_NEAR(est.factors.d(0), r.values.col(0).squaredNorm() / 20.0, 1e-14);
    EXPECT_TRUE(est.support[0].empty());
}

TEST(EstimatePrecision, IndependentColumnsGiveSmallZeta) {
    const ModelSpec spec{2, 2, 2, 1, 0, 5000};
    Rng rng(11);
    const Vector variances = (Vector(6) << 1.0, 2.0, 3.0, 0.5, 4.0, 1.5).finished();
    const Matrix data = gaussian_matrix(5000, 6, rng) * variances.cwiseSqrt().asDiagonal();
    const CholeskyEstimate est = estimate_precision({data}, spec, PenaltyPolicy::target_sparsity());
    EXPECT_LT(linalg::max_abs(est.factors.zeta()), 0.1);
    for (Eigen::Index j = 0; j < 6; ++j) {
        EXPECT_NEAR(est.factors.d(j), variances(j), 0.1 * variances(j));
    }
}

TEST(EstimatePrecision, RecoversReferenceCovariance) {
    const ModelSpec spec{5, 5, 5, 2, 2, 2000};
    const Matrix sigma = build_sigma(reference_truth(spec).covariance, spec);
    Rng rng(12);
    const CholeskyEstimate est =
        estimate_precision({sample_rows(sigma, 2000, rng)}, spec, PenaltyPolicy::target_sparsity());
    EXPECT_LT((est.sigma_hat - sigma).norm() / sigma.norm(), 0.15);
}

TEST(EstimatePrecision, EstimatesArePositiveDefiniteAndConsistent) {
    const ModelSpec spec{3, 2, 4, 1, 0, 30};
    Rng rng(13);
    for (const PenaltyPolicy& policy : {PenaltyPolicy::target_sparsity(), PenaltyPolicy::fixed_lambda(5.0),
                                        PenaltyPolicy::fixed_lambda(0.0), PenaltyPolicy::cross_validation()}) {
        const ResidualMatrix r{gaussian_matrix(30, 11, rng) * random_pd(11, rng)};
        const CholeskyEstimate est = estimate_precision(r, spec, policy);
        EXPECT_GT(linalg::min_eigenvalue(est.sigma_hat), 0.0);
        EXPECT_LT(linalg::max_abs(est.sigma_hat * est.sigma_inv_hat - Matrix::Identity(11, 11)), 1e-8);
        for (std::size_t j = 0; j < est.support.size(); ++j) {
            for (std::size_t k : est.support[j]) {
                EXPECT_LT(k, j);
            }
        }
    }
}

TEST(EstimatePrecision, TargetBudgetsBoundSupport) {
    const ModelSpec spec{2, 2, 3, 1, 0, 100};
    Rng rng(14);
    const ResidualMatrix r{gaussian_matrix(100, 8, rng) * random_pd(8, rng)};
    const CholeskyEstimate est = estimate_precision(r, spec, PenaltyPolicy::target_sparsity());
    for (std::size_t j = spec.kg; j < spec.p(); ++j) {
        EXPECT_LE(est.support[j].size(), *default_tau(spec, j)) << j;
    }
}

TEST(EstimatePrecision, RowOrderAndThreadCountDoNotMatter) {
    const ModelSpec spec{3, 3, 3, 1, 0, 50};
    Rng rng(15);
    const ResidualMatrix r{gaussian_matrix(50, 12, rng) * random_pd(12, rng)};
    const PenaltyPolicy policy = PenaltyPolicy::target_sparsity();
    const CholeskyEstimate serial = estimate_precision(r, spec, policy, 1);
    const CholeskyEstimate parallel = estimate_precision(r, spec, policy, 4);

    PrecisionRowSolver solver(r, spec, policy);
    std::vector<RowFit> rows(solver.columns());
    for (std::size_t j = solver.columns(); j-- > 0;) {
        rows[j] = solver.solve(j);
    }
    const CholeskyEstimate reversed = solver.assemble(rows);
    EXPECT_EQ(serial.factors.l, parallel.factors.l);
    EXPECT_EQ(serial.factors.d, parallel.factors.d);
    EXPECT_EQ(serial.factors.l, reversed.factors.l);
    EXPECT_EQ(serial.sigma_hat, reversed.sigma_hat);
}

TEST(EstimatePrecision, ZeroColumnIsDegenerate) {
    const ModelSpec spec{1, 1, 2, 1, 0, 20};
    Rng rng(16);
    Matrix data = gaussian_matrix(20, 3, rng);
    data.col(1).setZero();
    try {
        estimate_precision({data}, spec, PenaltyPolicy::target_sparsity());
        FAIL() << "expected DegenerateColumnError";
    } catch (const DegenerateColumnError& e) {
        EXPECT_EQ(e.column(), 1u);
    }
}

TEST(EstimatePrecision, TooFewSubjectsIsOverfit) {
    const ModelSpec spec{2, 1, 4, 1, 0, 3};
    Rng rng(17);
    EXPECT_THROW(estimate_precision({gaussian_matrix(3, 6, rng)}, spec, PenaltyPolicy::fixed_lambda(0.0)),
                 OverfitError);
}

TEST(EstimatePrecision, RejectsWrongColumnCount) {
    const ModelSpec spec{2, 1, 4, 1, 0, 10};
    Rng rng(18);
    EXPECT_THROW(estimate_precision({gaussian_matrix(10, 5, rng)}, spec, PenaltyPolicy::target_sparsity()),
                 DimensionError);
}
