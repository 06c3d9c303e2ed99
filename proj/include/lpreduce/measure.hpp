#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

#include "lpreduce/errors.hpp"
#include "lpreduce/rng.hpp"

namespace lpreduce {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Finite probability space: strictly positive atom masses summing to one.
class WeightedSpace {
public:
    explicit WeightedSpace(Eigen::VectorXd weights) : weights_(std::move(weights)) {
        if (weights_.size() == 0)
            throw std::invalid_argument("WeightedSpace: empty");
        if ((weights_.array() <= 0.0).any())
            throw std::invalid_argument("WeightedSpace: weights must be strictly positive");
        if (std::abs(weights_.sum() - 1.0) > 1e-12)
            throw std::invalid_argument("WeightedSpace: weights must sum to 1 within 1e-12");
    }

    /// Rescales to total mass one (used when loading external data).
    static WeightedSpace normalized(Eigen::VectorXd weights) {
        if (weights.size() == 0 || (weights.array() <= 0.0).any())
            throw std::invalid_argument("WeightedSpace: weights must be strictly positive");
        weights /= weights.sum();
        return WeightedSpace(std::move(weights));
    }

    static WeightedSpace uniform(int n) {
        return WeightedSpace(Eigen::VectorXd::Constant(n, 1.0 / n));
    }

    int size() const { return static_cast<int>(weights_.size()); }
    const Eigen::VectorXd& weights() const { return weights_; }

private:
    Eigen::VectorXd weights_;
};

/// Strictly positive reweighting with unit integral against a given space.
struct Density {
    Eigen::VectorXd values;

    static Density checked(Eigen::VectorXd values, const WeightedSpace& space) {
        if (values.size() != space.size())
            throw std::invalid_argument("Density: size mismatch");
        if ((values.array() <= 0.0).any())
            throw std::invalid_argument("Density: values must be strictly positive");
        if (std::abs(values.dot(space.weights()) - 1.0) > 1e-10)
            throw std::invalid_argument("Density: integral must be 1 within 1e-10");
        return Density{std::move(values)};
    }
};

/// n-dimensional space of functions on a WeightedSpace, stored as a
/// size x dim basis matrix with full column rank.
class Subspace {
public:
    Subspace(WeightedSpace space, Eigen::MatrixXd basis)
        : space_(std::move(space)), basis_(std::move(basis)) {
        if (basis_.rows() != space_.size())
            throw std::invalid_argument("Subspace: basis rows must match space size");
        if (basis_.cols() < 1 || basis_.cols() > basis_.rows())
            throw std::invalid_argument("Subspace: need 1 <= dim <= size");
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(basis_);
        const auto& sv = svd.singularValues();
        if (sv(sv.size() - 1) <= 1e-10 * sv(0))
            throw std::invalid_argument("Subspace: basis is rank deficient");
    }

    int size() const { return space_.size(); }
    int dim() const { return static_cast<int>(basis_.cols()); }
    const WeightedSpace& space() const { return space_; }
    const Eigen::MatrixXd& basis() const { return basis_; }

    /// Function with coefficient vector c.
    Eigen::VectorXd function(const Eigen::VectorXd& c) const { return basis_ * c; }

private:
    WeightedSpace space_;
    Eigen::MatrixXd basis_;
};

/// k test vectors in the operator domain, stored as columns.
struct VectorSystem {
    Eigen::MatrixXd columns; // domain_dim x k

    int count() const { return static_cast<int>(columns.cols()); }
    int dim() const { return static_cast<int>(columns.rows()); }
};

struct EuclideanBall {
    int dimension;
};

/// Functions on a finite carrier under the sup norm; the embedding maps
/// coefficient vectors to function values on the carrier.
struct SupOnPoints {
    Subspace embedding;
};

using DomainNorm = std::variant<EuclideanBall, SupOnPoints>;

inline int domain_dimension(const DomainNorm& dom) {
    if (const auto* ball = std::get_if<EuclideanBall>(&dom)) return ball->dimension;
    return std::get<SupOnPoints>(dom).embedding.dim();
}

inline void check_exponent(double p) {
    if (!(p >= 1.0))
        throw std::invalid_argument("p must lie in [1, inf]");
}

/// |x|^p with cheap paths for the exponents the test instances live on.
inline double abs_pow(double x, double p) {
    x = std::abs(x);
    if (p == 1.0) return x;
    if (p == 2.0) return x * x;
    if (p == 1.5) return x * std::sqrt(x);
    if (p == 3.0) return x * x * x;
    if (p == 4.0) {
        const double s = x * x;
        return s * s;
    }
    return std::pow(x, p);
}

/// L_p(space) norm of atomwise function values; p may be kInf.
inline double lp_norm(const Eigen::VectorXd& f, const WeightedSpace& space, double p) {
    check_exponent(p);
    if (f.size() != space.size())
        throw std::invalid_argument("lp_norm: function/space size mismatch");
    if (p == kInf)
        return f.cwiseAbs().maxCoeff();
    if (p == 1.0)
        return space.weights().dot(f.cwiseAbs());
    if (p == 2.0)
        return std::sqrt(space.weights().dot(f.cwiseAbs2()));
    double acc = 0.0;
    for (Eigen::Index i = 0; i < f.size(); ++i)
        acc += space.weights()(i) * abs_pow(f(i), p);
    return std::pow(acc, 1.0 / p);
}

/// Change of density: moves a subspace of L_p(w) isometrically onto
/// L_p(phi w) via f -> f / phi^(1/p). Uses the exactly renormalized density
/// so the isometry holds to machine precision even when phi's integral
/// carries rounding drift.
inline Subspace change_density(const Subspace& sub, const Density& phi, double p) {
    check_exponent(p);
    if (phi.values.size() != sub.size())
        throw std::invalid_argument("change_density: density size mismatch");
    if ((phi.values.array() <= 0.0).any())
        throw std::invalid_argument("change_density: density must be strictly positive");
    const Eigen::ArrayXd w = sub.space().weights().array();
    const double total = (phi.values.array() * w).sum();
    const Eigen::ArrayXd phi_hat = phi.values.array() / total;
    Eigen::VectorXd new_weights = (phi_hat * w).matrix();
    Eigen::MatrixXd new_basis = sub.basis();
    if (p != kInf) {
        const Eigen::ArrayXd scale = phi_hat.pow(-1.0 / p);
        new_basis.array().colwise() *= scale;
    }
    return Subspace(WeightedSpace(std::move(new_weights)), std::move(new_basis));
}

namespace detail {

/// Projected gradient ascent on the unit sphere with backtracking steps.
/// value(x) is evaluated on every trial point; grad(x) only on accepted
/// ones. x is kept unit and updated in place; returns the final value.
template <typename ValueFn, typename GradFn>
double sphere_ascent(Eigen::VectorXd& x, ValueFn&& value, GradFn&& grad,
                     int max_steps, double move_tol) {
    x.normalize();
    double best = value(x);
    double step = 1.0;
    for (int it = 0; it < max_steps; ++it) {
        Eigen::VectorXd g = grad(x);
        Eigen::VectorXd dir = g - g.dot(x) * x;
        if (dir.norm() < 1e-15) break;
        bool accepted = false;
        while (step > 1e-14) {
            Eigen::VectorXd cand = (x + step * dir).normalized();
            const double cv = value(cand);
            if (cv > best) {
                const double moved = (cand - x).norm();
                x = std::move(cand);
                best = cv;
                step *= 1.5;
                accepted = true;
                if (moved < move_tol) return best;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;
    }
    return best;
}

inline double weak_sum_sup_points(const Eigen::MatrixXd& values, double p) {
    // values: carrier_size x k function values; extreme functionals are
    // point evaluations, so the sup is a max over carrier atoms.
    double best = 0.0;
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        double acc = 0.0;
        if (p == kInf) {
            acc = values.row(r).cwiseAbs().maxCoeff();
        } else {
            for (Eigen::Index i = 0; i < values.cols(); ++i)
                acc += abs_pow(values(r, i), p);
            acc = std::pow(acc, 1.0 / p);
        }
        best = std::max(best, acc);
    }
    return best;
}

} // namespace detail

struct WeakNormOptions {
    int restarts = 16;
    int steps = 500;
    double move_tol = 1e-10;
    std::uint64_t seed = 0;
};

/// Weak-l_p norm of a vector system: sup over unit dual functionals a of
/// (sum_i |a(x_i)|^p)^(1/p). Exact for SupOnPoints domains (max over point
/// evaluations) and for Euclidean domains at p = 2 (largest singular value)
/// or p = inf (largest column norm). Euclidean p != 2 runs multi-start
/// projected ascent and returns the best stationary value, a certified
/// lower bound on the sup.
inline double weak_lp_norm(const VectorSystem& sys, const DomainNorm& dom, double p,
                           const WeakNormOptions& opts = {}) {
    check_exponent(p);
    if (sys.count() == 0)
        throw std::invalid_argument("weak_lp_norm: empty system");
    if (sys.dim() != domain_dimension(dom))
        throw std::invalid_argument("weak_lp_norm: system/domain dimension mismatch");

    if (const auto* sup = std::get_if<SupOnPoints>(&dom))
        return detail::weak_sum_sup_points(sup->embedding.basis() * sys.columns, p);

    const Eigen::MatrixXd& X = sys.columns;
    if (p == kInf)
        return X.colwise().norm().maxCoeff();
    if (p == 2.0)
        return Eigen::JacobiSVD<Eigen::MatrixXd>(X).singularValues()(0);

    // 2 -> p dual problem: maximize sum_i |<a, x_i>|^p over the unit sphere.
    auto value_fn = [&](const Eigen::VectorXd& a) {
        const Eigen::ArrayXd inner = (X.transpose() * a).array();
        double acc = 0.0;
        for (Eigen::Index i = 0; i < inner.size(); ++i) acc += abs_pow(inner(i), p);
        return acc;
    };
    auto grad_fn = [&](const Eigen::VectorXd& a) {
        Eigen::ArrayXd inner = (X.transpose() * a).array();
        return Eigen::VectorXd(
            X * (p * inner.sign() * inner.abs().pow(p - 1.0)).matrix());
    };

    const int d = sys.dim();
    const int k = sys.count();
    // seed the restarts with each normalized column; the rest are random
    std::vector<Eigen::VectorXd> inits;
    for (int i = 0; i < k && static_cast<int>(inits.size()) < opts.restarts; ++i) {
        const double nrm = X.col(i).norm();
        if (nrm > 0) inits.push_back(X.col(i) / nrm);
    }
    Rng rng(opts.seed);
    while (static_cast<int>(inits.size()) < opts.restarts) {
        Rng sub = rng.child(inits.size());
        Eigen::VectorXd a(d);
        for (int j = 0; j < d; ++j) a(j) = sub.gaussian();
        if (a.norm() < 1e-30) a.setOnes();
        inits.push_back(a.normalized());
    }

    std::vector<double> results(inits.size(), 0.0);
    parallel_for(inits.size(), [&](std::size_t i) {
        Eigen::VectorXd a = inits[i];
        results[i] =
            detail::sphere_ascent(a, value_fn, grad_fn, opts.steps, opts.move_tol);
    });
    double best = 0.0;
    for (double v : results) best = std::max(best, v);
    return std::pow(best, 1.0 / p);
}

} // namespace lpreduce
