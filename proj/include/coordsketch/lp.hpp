#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "coordsketch/errors.hpp"

namespace coordsketch {

inline double lp_norm_pow(const Eigen::VectorXd& r, double p) {
    if (p == 2.0) return r.squaredNorm();
    if (p == 1.0) return r.lpNorm<1>();
    return r.array().abs().pow(p).sum();
}

/// Minimizes sum_i |(B y + c)_i|^p over y for p >= 1.
///
/// p = 2 is solved directly (minimum-norm least squares). Otherwise damped
/// Newton steps on the smoothed objective sum (r^2 + eta^2)^{p/2}, with eta
/// shrunk geometrically from the residual scale down to 1e-12 of it; the
/// smoothing bias at the last stage is far below the 1e-4 target tolerance.
inline Eigen::VectorXd lp_fit(const Eigen::MatrixXd& B, const Eigen::VectorXd& c, double p) {
    if (p < 1.0) throw std::invalid_argument("lp_fit: p must be at least 1");
    const Eigen::Index k = B.cols();
    if (k == 0) return Eigen::VectorXd();
    Eigen::VectorXd y = B.completeOrthogonalDecomposition().solve(-c);
    if (p == 2.0) return y;

    auto smoothed = [&](const Eigen::VectorXd& r, double eta) {
        return (r.array().square() + eta * eta).pow(p / 2.0).sum();
    };
    Eigen::VectorXd r = B * y + c;
    double scale = std::max(r.cwiseAbs().maxCoeff(), 1e-300);
    for (double eta = scale; eta > 1e-12 * scale; eta *= 0.1) {
        for (int it = 0; it < 60; ++it) {
            Eigen::ArrayXd base = r.array().square() + eta * eta;
            Eigen::ArrayXd g_w = p * r.array() * base.pow(p / 2.0 - 1.0);
            Eigen::ArrayXd h_w = p * base.pow(p / 2.0 - 2.0) * ((p - 1.0) * r.array().square() + eta * eta);
            Eigen::VectorXd grad = B.transpose() * g_w.matrix();
            Eigen::MatrixXd hess = B.transpose() * h_w.matrix().asDiagonal() * B;
            double ridge = 1e-14 * std::max(hess.diagonal().maxCoeff(), 1e-300);
            hess.diagonal().array() += ridge;
            Eigen::VectorXd step = hess.ldlt().solve(-grad);
            double decrement = -grad.dot(step);
            if (!(decrement > 0.0) || !std::isfinite(decrement)) break;
            double f0 = smoothed(r, eta);
            double t = 1.0;
            Eigen::VectorXd r_step = B * step;
            Eigen::VectorXd r_new = r + r_step;
            while (smoothed(r_new, eta) > f0 - 0.25 * t * decrement && t > 1e-12) {
                t *= 0.5;
                r_new = r + t * r_step;
            }
            if (t <= 1e-12) break;
            y += t * step;
            r = r_new;
            if (decrement < 1e-14 * std::max(f0, 1e-300)) break;
        }
    }
    return y;
}

/// Evaluates max_x |<a,x>|^p / ||A x||_p^p for a fixed matrix A.
///
/// The problem is solved in the row space of A. It equals 1/min ||A x||_p^p
/// over the hyperplane <a,x> = 1, which is convex, so the value is global.
/// Vectors with a component outside the row space give +infinity.
class SensitivityOracle {
public:
    SensitivityOracle(const Eigen::MatrixXd& A, double p) : p_(p) {
        if (p < 1.0) throw std::invalid_argument("sensitivity: p must be at least 1");
        if (A.rows() == 0 || A.cols() == 0 || A.cwiseAbs().maxCoeff() == 0.0)
            throw UndefinedSensitivity("sensitivity is undefined for the zero matrix");
        Eigen::BDCSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        double tol = std::max(A.rows(), A.cols()) * std::numeric_limits<double>::epsilon() * sv(0);
        Eigen::Index rank = 0;
        while (rank < sv.size() && sv(rank) > tol) ++rank;
        basis_ = svd.matrixV().leftCols(rank);
        inv_sv_ = sv.head(rank).cwiseInverse();
        if (p != 2.0) reduced_ = A * basis_;
        u_ = svd.matrixU().leftCols(rank);
    }

    Eigen::Index rank() const { return basis_.cols(); }

    double operator()(const Eigen::VectorXd& a) const {
        double norm = a.norm();
        if (norm == 0.0) return 0.0;
        Eigen::VectorXd coords = basis_.transpose() * a;
        if ((a - basis_ * coords).norm() > 1e-9 * norm) return std::numeric_limits<double>::infinity();
        if (p_ == 2.0) return coords.cwiseProduct(inv_sv_).squaredNorm();

        const Eigen::Index r = coords.size();
        Eigen::VectorXd x0 = coords / coords.squaredNorm();
        Eigen::MatrixXd Z;
        if (r > 1) {
            Eigen::HouseholderQR<Eigen::MatrixXd> qr(coords);
            Z = (qr.householderQ() * Eigen::MatrixXd::Identity(r, r)).rightCols(r - 1);
        } else {
            Z = Eigen::MatrixXd(1, 0);
        }
        Eigen::VectorXd c = reduced_ * x0;
        Eigen::VectorXd y = lp_fit(reduced_ * Z, c, p_);
        Eigen::VectorXd resid = c + (r > 1 ? Eigen::VectorXd(reduced_ * (Z * y)) : Eigen::VectorXd::Zero(c.size()));
        double value = lp_norm_pow(resid, p_);
        return value > 0.0 ? 1.0 / value : std::numeric_limits<double>::infinity();
    }

    /// Sensitivities of all rows of the matrix the oracle was built from.
    /// For p = 2 these are the squared row norms of the left singular basis.
    Eigen::VectorXd row_scores(const Eigen::MatrixXd& A) const {
        if (p_ == 2.0) return u_.rowwise().squaredNorm();
        Eigen::VectorXd out(A.rows());
        for (Eigen::Index i = 0; i < A.rows(); ++i) out(i) = std::min(1.0, (*this)(A.row(i).transpose()));
        return out;
    }

private:
    double p_;
    Eigen::MatrixXd basis_;
    Eigen::VectorXd inv_sv_;
    Eigen::MatrixXd reduced_;
    Eigen::MatrixXd u_;
};

/// l_p sensitivity of row i: max_x |<a_i,x>|^p / ||A x||_p^p.
inline double lp_sensitivity(const Eigen::MatrixXd& A, Eigen::Index i, double p) {
    if (i < 0 || i >= A.rows()) throw std::out_of_range("lp_sensitivity: row index out of range");
    SensitivityOracle oracle(A, p);
    return std::min(1.0, oracle(A.row(i).transpose()));
}

inline Eigen::VectorXd lp_sensitivities(const Eigen::MatrixXd& A, double p) {
    SensitivityOracle oracle(A, p);
    return oracle.row_scores(A).cwiseMin(1.0);
}

} // namespace coordsketch
