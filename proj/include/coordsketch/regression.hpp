#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "coordsketch/dataset.hpp"
#include "coordsketch/lp.hpp"
#include "coordsketch/sampling.hpp"
#include "coordsketch/sketch.hpp"

namespace coordsketch {

struct RegressionResult {
    Eigen::VectorXd coef;
    bool rank_deficient = false;
};

/// min_x ||M [x; -1]||_p where the last column of M is the label.
inline RegressionResult regress_rows(const Eigen::MatrixXd& M, double p) {
    if (M.cols() < 2) throw std::invalid_argument("regression: need at least one feature and a label column");
    const Eigen::Index f = M.cols() - 1;
    Eigen::MatrixXd X = M.leftCols(f);
    RegressionResult res;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(X);
    res.rank_deficient = cod.rank() < f;
    res.coef = lp_fit(X, -M.col(f), p);
    return res;
}

/// Regression on the embedding carried by a sketch of feature|label rows.
inline RegressionResult solve_regression(const Sketch& sk) {
    if (sk.d < 2) throw std::invalid_argument("regression: rows need at least one feature and a label");
    return regress_rows(solve_embedding(sk), sk.params.p);
}

/// sum_i |a_i . x - b_i|^p over the full data.
inline double regression_cost(const Eigen::MatrixXd& A, const Eigen::VectorXd& coef, double p) {
    const Eigen::Index f = A.cols() - 1;
    return lp_norm_pow(A.leftCols(f) * coef - A.col(f), p);
}

struct LraOptions {
    double sign_const = 1.0;   // c_R in m = ceil(c_R k log(1/delta) / eps)
    double sketch_const = 1.0;
};

struct LraResult {
    Eigen::MatrixXd basis; // d x k, orthonormal columns
    std::size_t m = 0;     // columns of the sign matrix
    std::size_t sketch_rows = 0;
};

inline std::size_t sign_columns(std::size_t k, double eps, double delta, const LraOptions& opts = {}) {
    return static_cast<std::size_t>(std::max(1.0, std::ceil(opts.sign_const * static_cast<double>(k) *
                                                            std::log(1.0 / delta) / eps)));
}

/// ||A (I - P)||_F^2 for the projection P onto the column span of `basis`.
inline double projection_residual(const Eigen::MatrixXd& A, const Eigen::MatrixXd& basis) {
    return (A - (A * basis) * basis.transpose()).squaredNorm();
}

/// Best rank-k residual from the singular values.
inline double svd_residual(const Eigen::MatrixXd& A, std::size_t k) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(A);
    const auto& sv = svd.singularValues();
    double r = 0.0;
    for (Eigen::Index i = static_cast<Eigen::Index>(k); i < sv.size(); ++i) r += sv(i) * sv(i);
    return r;
}

/// Rank-k subspace from a leverage-score sketch of A R, R a d x m sign matrix.
///
/// Rows are sampled by their sensitivities in A R and carry their original
/// values, so the sampled block L[A R | A] is all that is needed: the best
/// rank-k X for ||L A R X - L A||_F is V S^-1 [U^T L A]_k from the SVD
/// L A R = U S V^T, and the answer is the row space of R X.
inline LraResult solve_lra(const Dataset& data, std::size_t k, double eps, double delta, std::uint64_t seed,
                           const LraOptions& opts = {}) {
    const std::size_t d = data.d();
    if (k < 1 || k > d) throw std::invalid_argument("lra: need 1 <= k <= d");
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("lra: eps out of range (0, 1)");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("lra: delta out of range (0, 1)");
    LraResult res;
    res.m = sign_columns(k, eps, delta, opts);
    const auto m = static_cast<Eigen::Index>(res.m);

    Rng rng = make_rng(seed, {0x1a});
    std::bernoulli_distribution coin(0.5);
    Eigen::MatrixXd R(static_cast<Eigen::Index>(d), m);
    for (Eigen::Index c = 0; c < m; ++c)
        for (Eigen::Index r = 0; r < R.rows(); ++r) R(r, c) = coin(rng) ? 1.0 : -1.0;

    Eigen::MatrixXd A = data.matrix();
    Eigen::MatrixXd AR = A * R;
    Dataset paired(res.m + d);
    std::vector<double> tau(data.size(), 0.0);
    if (AR.cwiseAbs().maxCoeff() > 0.0) {
        Eigen::VectorXd lev = lp_sensitivities(AR, 2.0);
        for (std::size_t i = 0; i < tau.size(); ++i) tau[i] = lev(static_cast<Eigen::Index>(i));
    }
    std::size_t row = 0;
    for (const auto& [key, val] : data.rows()) {
        std::vector<double> both(res.m + d);
        for (Eigen::Index c = 0; c < m; ++c) both[static_cast<std::size_t>(c)] = AR(static_cast<Eigen::Index>(row), c);
        std::copy(val.begin(), val.end(), both.begin() + m);
        paired.insert(key, std::move(both));
        ++row;
    }
    SketchParams sp{.p = 2.0, .eps = eps, .delta = delta, .sketch_const = opts.sketch_const, .salt = derive_seed(seed, {0x1b})};
    Sketch sk = create_sketch_from_scores(paired, tau, 1, sp);
    res.sketch_rows = sk.entry_count();

    Eigen::MatrixXd L = solve_embedding(sk);
    Eigen::MatrixXd LAR = L.leftCols(m);
    Eigen::MatrixXd LA = L.rightCols(static_cast<Eigen::Index>(d));
    if (L.rows() == 0 || LAR.cwiseAbs().maxCoeff() == 0.0) {
        res.basis = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
        return res;
    }
    Eigen::BDCSVD<Eigen::MatrixXd> svd(LAR, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > 1e-12 * sv(0) * std::max(LAR.rows(), LAR.cols())) ++rank;
    Eigen::MatrixXd U = svd.matrixU().leftCols(rank);
    Eigen::MatrixXd V = svd.matrixV().leftCols(rank);
    Eigen::MatrixXd proj = U.transpose() * LA; // rank x d
    Eigen::BDCSVD<Eigen::MatrixXd> inner(proj, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::Index keep = std::min<Eigen::Index>(static_cast<Eigen::Index>(k), inner.singularValues().size());
    Eigen::MatrixXd proj_k = inner.matrixU().leftCols(keep) * inner.singularValues().head(keep).asDiagonal() *
                             inner.matrixV().leftCols(keep).transpose();
    Eigen::MatrixXd X = V * sv.head(rank).cwiseInverse().asDiagonal() * proj_k; // m x d
    Eigen::MatrixXd RX = R * X;                                                  // d x d, rank <= k
    Eigen::BDCSVD<Eigen::MatrixXd> row_space(RX, Eigen::ComputeThinV);
    res.basis = row_space.matrixV().leftCols(keep);
    return res;
}

} // namespace coordsketch
