#pragma once

// Reference computations used by the tests. Each one takes a different route
// from the library code it checks: explicit pseudo-inverses instead of SVD
// bases, grid search instead of convex solves, a simplex LP instead of
// smoothed Newton steps, and nested loops instead of tuple ranking.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace oracle {

/// a_i^T (A^T A)^+ a_i for every row.
inline Eigen::VectorXd gram_leverage(const Eigen::MatrixXd& A) {
    Eigen::MatrixXd G = A.transpose() * A;
    Eigen::MatrixXd Gpinv = G.completeOrthogonalDecomposition().pseudoInverse();
    Eigen::VectorXd out(A.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i) out(i) = A.row(i) * Gpinv * A.row(i).transpose();
    return out;
}

/// max_x |<a,x>|^p / ||A x||_p^p for a two-column A, by scanning directions
/// x = (cos t, sin t) and refining around the best grid point.
inline double angular_sensitivity(const Eigen::MatrixXd& A, const Eigen::Vector2d& a, double p) {
    if (A.cols() != 2) throw std::invalid_argument("angular_sensitivity: two columns only");
    auto ratio = [&](double t) {
        Eigen::Vector2d x(std::cos(t), std::sin(t));
        double den = (A * x).cwiseAbs().array().pow(p).sum();
        return std::pow(std::abs(a.dot(x)), p) / den;
    };
    const int grid = 20000;
    double best_t = 0.0, best = -1.0;
    for (int g = 0; g < grid; ++g) {
        double t = std::numbers::pi * g / grid;
        double r = ratio(t);
        if (r > best) best = r, best_t = t;
    }
    double step = std::numbers::pi / grid;
    for (int it = 0; it < 60; ++it) {
        for (double t : {best_t - step, best_t + step}) {
            double r = ratio(t);
            if (r > best) best = r, best_t = t;
        }
        step *= 0.5;
    }
    return best;
}

/// Dense tableau simplex for min c^T z subject to T z = b, z >= 0, started
/// from a given feasible basis. Bland's rule, so it terminates.
inline Eigen::VectorXd simplex(Eigen::MatrixXd T, Eigen::VectorXd b, const Eigen::VectorXd& c,
                               std::vector<Eigen::Index> basis) {
    const Eigen::Index m = T.rows(), nv = T.cols();
    for (int iter = 0; iter < 100000; ++iter) {
        // Reduced costs c_j - c_B^T B^-1 T_j; the tableau already holds B^-1 T.
        Eigen::VectorXd cb(m);
        for (Eigen::Index r = 0; r < m; ++r) cb(r) = c(basis[static_cast<std::size_t>(r)]);
        Eigen::RowVectorXd reduced = c.transpose() - cb.transpose() * T;
        Eigen::Index enter = -1;
        for (Eigen::Index j = 0; j < nv; ++j)
            if (reduced(j) < -1e-10) {
                enter = j;
                break;
            }
        if (enter < 0) break;
        Eigen::Index leave = -1;
        double best = std::numeric_limits<double>::infinity();
        for (Eigen::Index r = 0; r < m; ++r) {
            if (T(r, enter) > 1e-12) {
                double q = b(r) / T(r, enter);
                if (q < best - 1e-12 || (q <= best + 1e-12 && leave >= 0 &&
                                         basis[static_cast<std::size_t>(r)] < basis[static_cast<std::size_t>(leave)])) {
                    best = std::min(best, q);
                    leave = r;
                }
            }
        }
        if (leave < 0) throw std::runtime_error("simplex: unbounded");
        double piv = T(leave, enter);
        T.row(leave) /= piv;
        b(leave) /= piv;
        for (Eigen::Index r = 0; r < m; ++r) {
            if (r == leave) continue;
            double f = T(r, enter);
            if (f == 0.0) continue;
            T.row(r) -= f * T.row(leave);
            b(r) -= f * b(leave);
        }
        basis[static_cast<std::size_t>(leave)] = enter;
    }
    Eigen::VectorXd z = Eigen::VectorXd::Zero(nv);
    for (Eigen::Index r = 0; r < m; ++r) z(basis[static_cast<std::size_t>(r)]) = b(r);
    return z;
}

/// argmin_x ||X x - y||_1 as a linear program over (x+, x-, u+, u-).
inline Eigen::VectorXd l1_regression(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    const Eigen::Index n = X.rows(), f = X.cols();
    Eigen::MatrixXd T(n, 2 * f + 2 * n);
    T << X, -X, Eigen::MatrixXd::Identity(n, n), -Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd b = y;
    std::vector<Eigen::Index> basis(static_cast<std::size_t>(n));
    for (Eigen::Index r = 0; r < n; ++r) {
        if (b(r) < 0) {
            T.row(r) *= -1.0;
            b(r) *= -1.0;
            basis[static_cast<std::size_t>(r)] = 2 * f + n + r;
        } else {
            basis[static_cast<std::size_t>(r)] = 2 * f + r;
        }
    }
    Eigen::VectorXd c = Eigen::VectorXd::Zero(2 * f + 2 * n);
    c.tail(2 * n).setOnes();
    Eigen::VectorXd z = simplex(T, b, c, basis);
    return z.head(f) - z.segment(f, f);
}

/// Least squares through the normal equations.
inline Eigen::VectorXd least_squares(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    return (X.transpose() * X).ldlt().solve(X.transpose() * y);
}

/// Generalized eigenvalues of (M^T M, A^T A) for full-rank A, via A^T A = L L^T.
inline Eigen::VectorXd generalized_eigenvalues(const Eigen::MatrixXd& M, const Eigen::MatrixXd& A) {
    Eigen::LLT<Eigen::MatrixXd> llt(A.transpose() * A);
    Eigen::MatrixXd Linv = llt.matrixL().solve(Eigen::MatrixXd::Identity(A.cols(), A.cols()));
    Eigen::MatrixXd S = Linv * (M.transpose() * M) * Linv.transpose();
    return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(S).eigenvalues();
}

/// Best rank-k squared Frobenius residual: the d - k smallest eigenvalues of A^T A.
inline double tail_energy(const Eigen::MatrixXd& A, std::size_t k) {
    Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(A.transpose() * A).eigenvalues();
    return ev.head(ev.size() - static_cast<Eigen::Index>(k)).cwiseMax(0.0).sum();
}

inline bool gram_within(const Eigen::MatrixXd& M, const Eigen::MatrixXd& A, double eps) {
    if (M.rows() == 0) return false;
    Eigen::VectorXd ev = generalized_eigenvalues(M, A);
    return ev.minCoeff() >= 1.0 - eps && ev.maxCoeff() <= 1.0 + eps;
}

/// Calls fn(tuple) for every ordered k-tuple of distinct indices in [0, n),
/// lexicographically, by nested counting.
inline void each_tuple(std::size_t n, std::size_t k, const std::function<void(const std::vector<std::size_t>&)>& fn) {
    std::vector<std::size_t> t(k, 0);
    std::function<void(std::size_t)> rec = [&](std::size_t pos) {
        if (pos == k) {
            fn(t);
            return;
        }
        for (std::size_t v = 0; v < n; ++v) {
            if (std::find(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(pos), v) !=
                t.begin() + static_cast<std::ptrdiff_t>(pos))
                continue;
            t[pos] = v;
            rec(pos + 1);
        }
    };
    rec(0);
}

/// sup |F_n(x) - x| for samples on [0, 1).
inline double ks_uniform(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    double n = static_cast<double>(xs.size()), d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        d = std::max({d, (static_cast<double>(i) + 1.0) / n - xs[i], xs[i] - static_cast<double>(i) / n});
    return d;
}

/// Two-sample Kolmogorov-Smirnov distance.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= x) ++i;
        while (j < b.size() && b[j] <= x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
    }
    return d;
}

/// Upper tail Pr[chi2_df >= x] from the Wilson-Hilferty normal approximation.
inline double chi_square_pvalue(double x, double df) {
    double z = (std::cbrt(x / df) - (1.0 - 2.0 / (9.0 * df))) / std::sqrt(2.0 / (9.0 * df));
    return 0.5 * std::erfc(z / std::sqrt(2.0));
}

/// Chi-square p-value of uniformity for values in [0, 1) over `bins` cells.
inline double uniformity_pvalue(const std::vector<double>& xs, std::size_t bins) {
    std::vector<double> count(bins, 0.0);
    for (double x : xs) count[std::min(bins - 1, static_cast<std::size_t>(x * bins))] += 1.0;
    double expect = static_cast<double>(xs.size()) / bins, stat = 0.0;
    for (double c : count) stat += (c - expect) * (c - expect) / expect;
    return chi_square_pvalue(stat, static_cast<double>(bins - 1));
}

inline double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
    return 0.5 * s;
}

} // namespace oracle
