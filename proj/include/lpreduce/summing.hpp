#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "lpreduce/measure.hpp"

namespace lpreduce {

/// Finite-rank operator from a normed domain into L_p of a finite weighted
/// space. `p` is the target exponent and belongs to the operator; the
/// summing exponent is passed separately to the estimators, so e.g. the
/// identity on l_2^n keeps its l_2 target norm at every summing exponent.
struct FiniteRankOperator {
    Eigen::MatrixXd matrix; // target_size x domain_dim
    DomainNorm domain;
    WeightedSpace target;
    double p;

    int domain_dim() const { return static_cast<int>(matrix.cols()); }
};

inline void check_operator(const FiniteRankOperator& u) {
    if (u.matrix.rows() != u.target.size())
        throw std::invalid_argument("FiniteRankOperator: matrix rows != target size");
    if (u.matrix.cols() != domain_dimension(u.domain))
        throw std::invalid_argument("FiniteRankOperator: matrix cols != domain dim");
    check_exponent(u.p);
}

inline double image_norm(const FiniteRankOperator& u, const Eigen::VectorXd& x) {
    return lp_norm(u.matrix * x, u.target, u.p);
}

/// Identity on l_2^n, represented with a uniform probability target: the
/// matrix sqrt(n) I makes ||u x||_{L_2(uniform)} = ||x||_2.
inline FiniteRankOperator euclidean_identity(int n) {
    return FiniteRankOperator{std::sqrt(double(n)) * Eigen::MatrixXd::Identity(n, n),
                              EuclideanBall{n}, WeightedSpace::uniform(n), 2.0};
}

/// Diagonal operator on l_2^n with the given entries (l_2 target norm).
inline FiniteRankOperator diagonal_euclidean_operator(const Eigen::VectorXd& d) {
    const int n = static_cast<int>(d.size());
    Eigen::MatrixXd m = (std::sqrt(double(n)) * d).asDiagonal();
    return FiniteRankOperator{std::move(m), EuclideanBall{n},
                              WeightedSpace::uniform(n), 2.0};
}

/// Exact pi_2 for operators with Hilbertian domain: the Hilbert-Schmidt norm
/// of the matrix representing u into L_2 of the target.
inline double hilbert_pi2_exact(const FiniteRankOperator& u) {
    check_operator(u);
    if (!std::holds_alternative<EuclideanBall>(u.domain))
        throw std::invalid_argument("hilbert_pi2_exact: domain must be a Euclidean ball");
    Eigen::MatrixXd t = u.matrix;
    t.array().colwise() *= u.target.weights().array().sqrt();
    return t.norm();
}

struct SummingEstimate {
    double value = 0.0;
    int k = 0;
    VectorSystem witnesses;          // weak norm <= 1 + 1e-8
    int restarts_used = 0;
    double constraint_residual = 0.0; // |weak_lp_norm(witnesses) - 1|
    double spread = 0.0;              // (best - worst) / best over restarts
    bool poor_agreement = false;      // spread above 5%
};

struct PiOptions {
    int restarts = 32;
    int steps = 2000;
    double move_tol = 1e-12;
    std::uint64_t seed = 0;
    const VectorSystem* warm_start = nullptr; // witnesses from a smaller k
    WeakNormOptions certify{};                // final constraint evaluation
};

namespace detail {

/// Weak-norm evaluation loop used inside the ascent: keeps a warm dual
/// vector for Euclidean p != 2 so each call costs a handful of ascent steps
/// instead of a full multi-start solve.
class WeakState {
public:
    WeakState(const DomainNorm& dom, double p, std::uint64_t seed)
        : dom_(&dom), p_(p), rng_(seed) {}

    // returns W^p and records the active dual data for gradients
    double eval(const Eigen::MatrixXd& X) {
        if (const auto* sup = std::get_if<SupOnPoints>(dom_)) {
            const Eigen::MatrixXd& B = sup->embedding.basis();
            double best = 0.0;
            best_row_ = 0;
            for (Eigen::Index r = 0; r < B.rows(); ++r) {
                double acc = 0.0;
                for (Eigen::Index i = 0; i < X.cols(); ++i)
                    acc += abs_pow(B.row(r) * X.col(i), p_);
                if (acc > best) {
                    best = acc;
                    best_row_ = r;
                }
            }
            return best;
        }
        if (p_ == 2.0) {
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU |
                                                         Eigen::ComputeThinV);
            sv_u_ = svd.matrixU().col(0);
            sv_v_ = svd.matrixV().col(0);
            const double s = svd.singularValues()(0);
            return s * s;
        }
        return eval_euclid_dual(X);
    }

    // gradient of W^p at the dual recorded by the last eval()
    Eigen::MatrixXd grad(const Eigen::MatrixXd& X, double last_wp) {
        if (const auto* sup = std::get_if<SupOnPoints>(dom_)) {
            const Eigen::VectorXd a = sup->embedding.basis().row(best_row_).transpose();
            return dual_grad(X, a);
        }
        if (p_ == 2.0) {
            // d(s^2) = 2 s u1 v1^T dX-wise
            return 2.0 * std::sqrt(last_wp) * sv_u_ * sv_v_.transpose();
        }
        return dual_grad(X, dual_);
    }

private:
    Eigen::MatrixXd dual_grad(const Eigen::MatrixXd& X, const Eigen::VectorXd& a) const {
        Eigen::ArrayXd inner = (X.transpose() * a).array();
        Eigen::ArrayXd coef = p_ * inner.sign() * inner.abs().pow(p_ - 1.0);
        return a * coef.matrix().transpose();
    }

    double dual_value(const Eigen::MatrixXd& X, const Eigen::VectorXd& a) const {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < X.cols(); ++i)
            acc += abs_pow(a.dot(X.col(i)), p_);
        return acc;
    }

    double eval_euclid_dual(const Eigen::MatrixXd& X) {
        auto value_fn = [&](const Eigen::VectorXd& a) { return dual_value(X, a); };
        auto grad_fn = [&](const Eigen::VectorXd& a) {
            Eigen::ArrayXd inner = (X.transpose() * a).array();
            return Eigen::VectorXd(
                X * (p_ * inner.sign() * inner.abs().pow(p_ - 1.0)).matrix());
        };
        if (dual_.size() != X.rows()) {
            Eigen::Index best = 0;
            X.colwise().norm().maxCoeff(&best);
            dual_ = X.col(best);
            if (dual_.norm() < 1e-30) dual_ = Eigen::VectorXd::Ones(X.rows());
            dual_.normalize();
        }
        double best = sphere_ascent(dual_, value_fn, grad_fn, 8, 1e-13);
        if (++calls_ % 16 == 0) { // periodic restart against dual drift
            Eigen::VectorXd a(X.rows());
            for (Eigen::Index j = 0; j < a.size(); ++j) a(j) = rng_.gaussian();
            a.normalize();
            const double v = sphere_ascent(a, value_fn, grad_fn, 30, 1e-13);
            if (v > best) {
                best = v;
                dual_ = a;
            }
        }
        return best;
    }

    const DomainNorm* dom_;
    double p_;
    Rng rng_;
    Eigen::VectorXd dual_;
    Eigen::Index best_row_ = 0;
    Eigen::VectorXd sv_u_, sv_v_;
    long calls_ = 0;
};

} // namespace detail

/// Lower bound on pi_p^(k)(u): maximizes (sum_i ||u x_i||^p)^(1/p) over
/// systems with weak-l_p norm at most one, by multi-start ascent on the
/// scale-invariant ratio. Witnesses are rescaled to meet the constraint and
/// the reported value is recomputed from them, so it is a certified lower
/// bound whenever the domain's weak norm is exact (SupOnPoints, Euclidean
/// p = 2 or inf).
inline SummingEstimate pi_pk_lower(const FiniteRankOperator& u, int k, double p,
                                   const PiOptions& opts = {}) {
    check_operator(u);
    check_exponent(p);
    if (p == kInf)
        throw std::invalid_argument("pi_pk_lower: requires finite p");
    if (k < 1)
        throw std::invalid_argument("pi_pk_lower: k must be positive");
    if (opts.warm_start && (opts.warm_start->dim() != u.domain_dim() ||
                            opts.warm_start->count() > k))
        throw std::invalid_argument("pi_pk_lower: bad warm start");

    const int d = u.domain_dim();
    const double q = u.p;
    const Eigen::ArrayXd tw = u.target.weights().array();

    auto strong_sum = [&](const Eigen::MatrixXd& X) { // sum_i ||u x_i||^p
        double acc = 0.0;
        for (int i = 0; i < k; ++i) {
            const Eigen::VectorXd v = u.matrix * X.col(i);
            double nrm;
            if (q == kInf) {
                nrm = v.cwiseAbs().maxCoeff();
            } else {
                double s = 0.0;
                for (Eigen::Index r = 0; r < v.size(); ++r)
                    s += tw(r) * abs_pow(v(r), q);
                nrm = std::pow(s, 1.0 / q);
            }
            acc += abs_pow(nrm, p);
        }
        return acc;
    };
    auto strong_grad = [&](const Eigen::MatrixXd& X) { // gradient of log strong_sum
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(d, k);
        double acc = 0.0;
        for (int i = 0; i < k; ++i) {
            const Eigen::VectorXd v = u.matrix * X.col(i);
            if (q == kInf) {
                Eigen::Index r;
                const double nrm = v.cwiseAbs().maxCoeff(&r);
                acc += abs_pow(nrm, p);
                if (nrm > 0)
                    g.col(i) = p * std::pow(nrm, p - 1.0) *
                               (v(r) > 0 ? 1.0 : -1.0) * u.matrix.row(r).transpose();
            } else {
                double s = 0.0;
                for (Eigen::Index r = 0; r < v.size(); ++r)
                    s += tw(r) * abs_pow(v(r), q);
                const double nrm = std::pow(s, 1.0 / q);
                acc += abs_pow(nrm, p);
                if (nrm > 0) {
                    Eigen::ArrayXd coef =
                        tw * v.array().sign() * v.array().abs().pow(q - 1.0);
                    g.col(i) = p * std::pow(nrm, p - q) *
                               (u.matrix.transpose() * coef.matrix());
                }
            }
        }
        if (acc > 0) g /= acc;
        return g;
    };

    Rng rng(opts.seed);
    const int extra = opts.warm_start ? 1 : 0;
    const int total = opts.restarts + extra;
    std::vector<double> values(total, 0.0);
    std::vector<Eigen::MatrixXd> finals(total);

    auto make_init = [&](int idx) {
        Eigen::MatrixXd X(d, k);
        if (idx == 0 && opts.warm_start) {
            X.setZero();
            X.leftCols(opts.warm_start->count()) = opts.warm_start->columns;
            // a zero-padded warm start evaluates to the smaller-k value, which
            // keeps the estimate nondecreasing in k
            return X;
        }
        Rng sub = rng.child(idx);
        for (int c = 0; c < k; ++c)
            for (int r = 0; r < d; ++r) X(r, c) = sub.gaussian();
        return X;
    };

    parallel_for(static_cast<std::size_t>(total), [&](std::size_t idx) {
        detail::WeakState weak(u.domain, p, rng.child(1000 + idx).seed());
        auto value_fn = [&](const Eigen::VectorXd& xvec) {
            const Eigen::MatrixXd X =
                Eigen::Map<const Eigen::MatrixXd>(xvec.data(), d, k);
            const double sn = strong_sum(X);
            const double swp = weak.eval(X);
            if (sn <= 0.0 || swp <= 0.0) return -kInf;
            return std::log(sn) - std::log(swp);
        };
        auto grad_fn = [&](const Eigen::VectorXd& xvec) {
            const Eigen::MatrixXd X =
                Eigen::Map<const Eigen::MatrixXd>(xvec.data(), d, k);
            const double swp = weak.eval(X);
            Eigen::MatrixXd g = strong_grad(X);
            if (swp > 0.0) g -= weak.grad(X, swp) / swp;
            return Eigen::VectorXd(Eigen::Map<Eigen::VectorXd>(g.data(), d * k));
        };

        Eigen::MatrixXd X0 = make_init(static_cast<int>(idx));
        Eigen::VectorXd xvec = Eigen::Map<Eigen::VectorXd>(X0.data(), d * k);
        if (xvec.norm() < 1e-30) xvec.setOnes();
        if (idx == 0 && opts.warm_start) {
            // keep the warm start verbatim as a candidate
            finals[idx] = X0;
        } else {
            detail::sphere_ascent(xvec, value_fn, grad_fn, opts.steps, opts.move_tol);
            finals[idx] = Eigen::Map<Eigen::MatrixXd>(xvec.data(), d, k);
        }
    });

    // certify every candidate with the full multi-start weak norm
    WeakNormOptions cert = opts.certify;
    cert.seed = rng.child(0xCE87).seed();
    for (int idx = 0; idx < total; ++idx) {
        const double w = weak_lp_norm(VectorSystem{finals[idx]}, u.domain, p, cert);
        values[idx] =
            w > 0 ? std::pow(strong_sum(finals[idx]), 1.0 / p) / w : 0.0;
    }

    int best = 0;
    double lo = kInf;
    for (int idx = 0; idx < total; ++idx) {
        if (values[idx] > values[best]) best = idx;
        lo = std::min(lo, values[idx]);
    }

    SummingEstimate est;
    est.k = k;
    est.restarts_used = total;
    const double wbest =
        weak_lp_norm(VectorSystem{finals[best]}, u.domain, p, cert);
    est.witnesses = VectorSystem{finals[best] / wbest};
    est.value = std::pow(strong_sum(est.witnesses.columns), 1.0 / p);
    est.constraint_residual = std::abs(
        weak_lp_norm(est.witnesses, u.domain, p, cert) - 1.0);
    est.spread = est.value > 0 ? (values[best] - lo) / values[best] : 0.0;
    est.poor_agreement = est.spread > 0.05;
    return est;
}

/// Grid-plus-random-search oracle for tiny instances (domain dim <= 3,
/// k <= 3). Independent of the gradient path: directions come from product
/// sphere grids, the Euclidean p != 2 weak norm from a dual grid, and
/// refinement from plain random perturbation hill climbing.
inline double pi_pk_bruteforce(const FiniteRankOperator& u, int k, double p,
                               int resolution) {
    check_operator(u);
    if (p == kInf)
        throw std::invalid_argument("pi_pk_bruteforce: requires finite p");
    const int d = u.domain_dim();
    if (d > 3 || k > 3 || k < 1)
        throw std::invalid_argument("pi_pk_bruteforce: domain dim and k must be <= 3");
    if (resolution < 2)
        throw std::invalid_argument("pi_pk_bruteforce: resolution must be >= 2");

    std::vector<Eigen::VectorXd> dirs;
    if (d == 1) {
        dirs.push_back(Eigen::VectorXd::Ones(1));
    } else if (d == 2) {
        for (int j = 0; j < resolution; ++j) {
            const double th = M_PI * j / resolution;
            Eigen::VectorXd v(2);
            v << std::cos(th), std::sin(th);
            dirs.push_back(v);
        }
    } else {
        for (int a = 0; a < resolution; ++a) {
            const double phi = M_PI * (a + 0.5) / resolution;
            for (int b = 0; b < resolution; ++b) {
                const double psi = M_PI * b / resolution;
                Eigen::VectorXd v(3);
                v << std::sin(phi) * std::cos(psi), std::sin(phi) * std::sin(psi),
                    std::cos(phi);
                dirs.push_back(v);
            }
        }
    }

    std::vector<Eigen::VectorXd> duals; // for the Euclidean p != 2 weak norm
    const bool euclid = std::holds_alternative<EuclideanBall>(u.domain);
    if (euclid && p != 2.0) {
        const int fine = 4 * resolution;
        if (d == 1) {
            duals.push_back(Eigen::VectorXd::Ones(1));
        } else if (d == 2) {
            for (int j = 0; j < fine; ++j) {
                const double th = M_PI * j / fine;
                Eigen::VectorXd v(2);
                v << std::cos(th), std::sin(th);
                duals.push_back(v);
            }
        } else {
            for (int a = 0; a < fine; ++a) {
                const double phi = M_PI * (a + 0.5) / fine;
                for (int b = 0; b < fine; ++b) {
                    const double psi = M_PI * b / fine;
                    Eigen::VectorXd v(3);
                    v << std::sin(phi) * std::cos(psi),
                        std::sin(phi) * std::sin(psi), std::cos(phi);
                    duals.push_back(v);
                }
            }
        }
    }

    auto weak_bf = [&](const Eigen::MatrixXd& X) {
        if (!euclid)
            return detail::weak_sum_sup_points(
                std::get<SupOnPoints>(u.domain).embedding.basis() * X, p);
        if (p == 2.0)
            return Eigen::JacobiSVD<Eigen::MatrixXd>(X).singularValues()(0);
        double best = 0.0;
        for (const auto& a : duals) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) acc += abs_pow(a.dot(X.col(i)), p);
            best = std::max(best, acc);
        }
        return std::pow(best, 1.0 / p);
    };
    auto ratio = [&](const Eigen::MatrixXd& X) {
        const double w = weak_bf(X);
        if (w <= 0) return 0.0;
        double acc = 0.0;
        for (int i = 0; i < k; ++i) acc += abs_pow(image_norm(u, X.col(i)), p);
        return std::pow(acc, 1.0 / p) / w;
    };

    const std::size_t n_dirs = dirs.size();
    const std::size_t per_slot = n_dirs * resolution;
    double combos = 1.0;
    for (int i = 0; i < k; ++i) combos *= static_cast<double>(per_slot);
    if (combos > 3e7)
        throw std::invalid_argument("pi_pk_bruteforce: resolution too large");

    double best = 0.0;
    Eigen::MatrixXd best_x = Eigen::MatrixXd::Zero(d, k);
    Eigen::MatrixXd X(d, k);
    std::vector<std::size_t> state(k, 0);
    const std::size_t total = static_cast<std::size_t>(combos);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rem = flat;
        double rmax = 0.0;
        for (int i = 0; i < k; ++i) {
            state[i] = rem % per_slot;
            rem /= per_slot;
            const double r = double(state[i] % resolution + 1) / resolution;
            rmax = std::max(rmax, r);
            X.col(i) = r * dirs[state[i] / resolution];
        }
        if (rmax < 1.0) continue; // scale-invariant: search max radius = 1
        const double v = ratio(X);
        if (v > best) {
            best = v;
            best_x = X;
        }
    }

    // random perturbation hill climb from the best grid point
    Rng rng(0x9bf5);
    double sigma = 0.3;
    const int climbs = 2000 * k;
    for (int it = 0; it < climbs; ++it) {
        Eigen::MatrixXd cand = best_x;
        for (int c = 0; c < k; ++c)
            for (int r = 0; r < d; ++r) cand(r, c) += sigma * rng.gaussian();
        const double v = ratio(cand);
        if (v > best) {
            best = v;
            best_x = cand;
        }
        sigma = std::max(sigma * 0.998, 1e-4);
    }
    return best;
}

struct CurvePoint {
    int k = 0;
    double value = 0.0;
    int restarts = 0;
    double spread = 0.0;
};

/// pi_p^(k) lower bounds along increasing k, warm-starting each run with the
/// previous witnesses so the curve is nondecreasing by construction.
inline std::vector<CurvePoint> saturation_curve(const FiniteRankOperator& u,
                                                const std::vector<int>& ks, double p,
                                                std::uint64_t seed,
                                                const PiOptions& base = {}) {
    for (std::size_t i = 0; i + 1 < ks.size(); ++i)
        if (ks[i] >= ks[i + 1])
            throw std::invalid_argument("saturation_curve: ks must be strictly increasing");
    std::vector<CurvePoint> curve;
    VectorSystem warm;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        PiOptions opts = base;
        opts.seed = seed;
        if (warm.columns.size() > 0) opts.warm_start = &warm;
        SummingEstimate est = pi_pk_lower(u, ks[i], p, opts);
        curve.push_back(CurvePoint{ks[i], est.value, est.restarts_used, est.spread});
        warm = std::move(est.witnesses);
    }
    return curve;
}

} // namespace lpreduce
