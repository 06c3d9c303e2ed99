#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <utility>

#include "lpreduce/measure.hpp"

namespace lpreduce {

struct LewisResult {
    Density beta;
    Eigen::MatrixXd lewis_basis; // size x n; orthonormal in L_2(beta d mu)
    double residual;             // max over atoms of |sum_i f_i^2 - n|
    int iterations;
};

struct LewisOptions {
    double tol = 1e-8; // converged when residual <= tol * n
    int max_iter = 10000;
    std::uint64_t seed = 0; // only used to perturb out of a stalled iteration
};

namespace detail {

/// R factor of diag(sqrt(s)) * B; throws if the weighted Gram is rank
/// deficient.
inline Eigen::MatrixXd weighted_r_factor(const Eigen::MatrixXd& B,
                                         const Eigen::ArrayXd& s) {
    Eigen::MatrixXd A = B;
    A.array().colwise() *= s.sqrt();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
    Eigen::MatrixXd R = qr.matrixQR()
                            .topRows(B.cols())
                            .triangularView<Eigen::Upper>();
    const Eigen::ArrayXd d = R.diagonal().array().abs();
    if (d.minCoeff() <= 1e-13 * d.maxCoeff())
        throw std::invalid_argument("lewis_density: rank-deficient Gram matrix");
    return R;
}

/// Leverage-type quantities l_w = b_w^T (B^T S B)^{-1} b_w for all atoms.
inline Eigen::ArrayXd gram_leverages(const Eigen::MatrixXd& B,
                                     const Eigen::ArrayXd& s) {
    const Eigen::MatrixXd R = weighted_r_factor(B, s);
    // rows of B * R^{-1} have squared norm b^T G^{-1} b
    Eigen::MatrixXd T = R.transpose()
                            .triangularView<Eigen::Lower>()
                            .solve(B.transpose());
    return T.colwise().squaredNorm().transpose().array();
}

} // namespace detail

/// Lewis change of density: finds the density beta for which the rescaled
/// subspace Y = { x / beta^(1/p) : x in X } has a basis orthonormal in
/// L_2(beta d mu) with constant squared sum n. Fixed-point iteration on the
/// atom weights, damped by exponent 1/2 for p >= 4; convergence is certified
/// post hoc by the residual, never by iteration theory.
inline LewisResult lewis_density(const Subspace& sub, double p,
                                 const LewisOptions& opts = {}) {
    if (!(p > 1.0) || !(p < kInf))
        throw std::invalid_argument("lewis_density: requires 1 < p < inf");
    if (!(opts.tol > 0.0))
        throw std::invalid_argument("lewis_density: tol must be positive");

    const Eigen::MatrixXd& B = sub.basis();
    const Eigen::ArrayXd mu = sub.space().weights().array();
    const int n = sub.dim();
    const double damp = p >= 4.0 ? 0.5 : 1.0;

    Eigen::ArrayXd beta = Eigen::ArrayXd::Ones(sub.size());
    double best_residual = kInf;
    double last_residual = kInf;
    int stalled = 0;
    Rng rng(opts.seed);

    for (int it = 1; it <= opts.max_iter; ++it) {
        const Eigen::ArrayXd s = mu * beta.pow(1.0 - 2.0 / p);
        const Eigen::ArrayXd lev = detail::gram_leverages(B, s);

        // Lewis condition: sum_i f_i(w)^2 = beta_w^{-2/p} * l_w = n
        const double residual = (lev * beta.pow(-2.0 / p) - double(n)).abs().maxCoeff();
        best_residual = std::min(best_residual, residual);
        if (residual <= opts.tol * n) {
            const Eigen::ArrayXd bw = beta * mu;
            Eigen::MatrixXd basis_y = B;
            basis_y.array().colwise() *= beta.pow(-1.0 / p);
            const Eigen::MatrixXd Ry = detail::weighted_r_factor(basis_y, bw);
            Eigen::MatrixXd f = Ry.transpose()
                                    .triangularView<Eigen::Lower>()
                                    .solve(basis_y.transpose())
                                    .transpose();
            Density beta_density = Density::checked(beta.matrix(), sub.space());
            return LewisResult{std::move(beta_density), std::move(f), residual, it};
        }

        Eigen::ArrayXd next = (lev / double(n)).pow(p / 2.0);
        if (damp != 1.0)
            next = (next * beta).sqrt();
        next /= (next * mu).sum();

        // a stalled residual means the map is cycling; jitter once and go on
        if (residual > 0.999 * last_residual) {
            if (++stalled >= 50) {
                for (Eigen::Index i = 0; i < next.size(); ++i)
                    next(i) *= std::exp(0.01 * rng.gaussian());
                next /= (next * mu).sum();
                stalled = 0;
            }
        } else {
            stalled = 0;
        }
        last_residual = residual;
        beta = std::move(next);
    }
    throw ConvergenceError("lewis_density: no convergence within max_iter",
                           best_residual);
}

/// alpha = (beta + 1) / 2; always a density with every value above 1/2.
inline Density blend_density(const Density& beta) {
    return Density{((beta.values.array() + 1.0) / 2.0).matrix()};
}

struct SupBoundReport {
    double max_ratio; // worst observed ||f||_inf / ||f||_p
    double bound;     // (2n)^(1/p) for p < 2, (2n)^(1/2) for p > 2
    int samples;
    bool violated; // max_ratio > bound beyond 1e-9 relative slack
};

/// Samples random directions of a density-changed subspace and checks the
/// sup-norm bound against the L_p norm.
inline SupBoundReport verify_sup_bounds(const Subspace& sub_tilde, double p,
                                        int samples, std::uint64_t seed) {
    if (!(p > 1.0) || !(p < kInf))
        throw std::invalid_argument("verify_sup_bounds: requires 1 < p < inf");
    const int n = sub_tilde.dim();
    const double exponent = p <= 2.0 ? 1.0 / p : 0.5;
    const double bound = std::pow(2.0 * n, exponent);
    Rng rng(seed);
    double max_ratio = 0.0;
    for (int s = 0; s < samples; ++s) {
        Eigen::VectorXd c(n);
        for (int j = 0; j < n; ++j) c(j) = rng.gaussian();
        if (c.norm() < 1e-30) continue;
        const Eigen::VectorXd f = sub_tilde.function(c);
        const double denom = lp_norm(f, sub_tilde.space(), p);
        if (denom == 0.0) continue;
        max_ratio = std::max(max_ratio, lp_norm(f, sub_tilde.space(), kInf) / denom);
    }
    return SupBoundReport{max_ratio, bound, samples,
                          max_ratio > bound * (1.0 + 1e-9)};
}

} // namespace lpreduce
