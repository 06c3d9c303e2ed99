#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "lpreduce/measure.hpp"
#include "lpreduce/summing.hpp"

namespace lpreduce {

struct MeanStdErr {
    double mean = 0.0;
    double std_error = 0.0;
};

struct RademacherOptions {
    int trials = 200;
    int probes = 64;
    bool gaussian = false; // Rademacher signs by default
    std::uint64_t seed = 0;
    int ascent_steps = 100;
};

namespace detail {

/// sup over the unit ball of Y_p of |sum_i e_i nu_i |y_i|^p| for one fixed
/// coefficient vector e: random probes plus ascent refinement on the
/// scale-invariant ratio. Exact for one-dimensional subspaces.
inline double signed_mass_sup(const Subspace& sub, double p,
                              const Eigen::ArrayXd& signs, int probes,
                              int ascent_steps, std::uint64_t seed) {
    const Eigen::ArrayXd w = sub.space().weights().array();
    const Eigen::ArrayXd sw = signs * w;
    const int n = sub.dim();

    auto ratio = [&](const Eigen::VectorXd& c, double side) {
        const Eigen::VectorXd y = sub.basis() * c;
        double total = 0.0, signed_sum = 0.0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double a = abs_pow(y(i), p);
            total += w(i) * a;
            signed_sum += sw(i) * a;
        }
        return total > 0.0 ? side * signed_sum / total : 0.0;
    };

    double best = 0.0;
    Rng rng(seed);
    Eigen::VectorXd best_c = Eigen::VectorXd::Unit(n, 0);
    for (int s = 0; s < probes; ++s) {
        Eigen::VectorXd c(n);
        for (int j = 0; j < n; ++j) c(j) = rng.gaussian();
        if (c.norm() < 1e-30) continue;
        const double v = std::abs(ratio(c, 1.0));
        if (v > best) {
            best = v;
            best_c = c;
        }
    }
    for (int j = 0; j < n; ++j) {
        const double v = std::abs(ratio(Eigen::VectorXd::Unit(n, j), 1.0));
        if (v > best) {
            best = v;
            best_c = Eigen::VectorXd::Unit(n, j);
        }
    }
    if (n > 1) {
        for (double side : {1.0, -1.0}) {
            auto value_fn = [&](const Eigen::VectorXd& c) { return ratio(c, side); };
            auto grad_fn = [&](const Eigen::VectorXd& c) {
                Eigen::ArrayXd y = (sub.basis() * c).array();
                Eigen::ArrayXd a = y.abs().pow(p);
                const double total = (w * a).sum();
                const double signed_sum = (sw * a).sum();
                Eigen::ArrayXd base = p * y.sign() * y.abs().pow(p - 1.0);
                // gradient of side*signed/total
                Eigen::ArrayXd coef =
                    (side * sw * base) / total -
                    (side * signed_sum / (total * total)) * (w * base);
                return Eigen::VectorXd(sub.basis().transpose() * coef.matrix());
            };
            Eigen::VectorXd c = best_c;
            best = std::max(best, sphere_ascent(c, value_fn, grad_fn, ascent_steps,
                                                1e-12));
        }
    }
    return best;
}

} // namespace detail

/// Monte Carlo estimate of E sup |sum_i e_i nu_i |y_i|^p| over the unit ball
/// of the subspace, with Rademacher signs (or Gaussians when selected).
inline MeanStdErr rademacher_sup(const Subspace& sub, double p,
                                 const RademacherOptions& opts = {}) {
    check_exponent(p);
    if (p == kInf)
        throw std::invalid_argument("rademacher_sup: requires finite p");
    Rng rng(opts.seed);
    const int m = sub.size();
    std::vector<double> sups(opts.trials, 0.0);
    parallel_for(static_cast<std::size_t>(opts.trials), [&](std::size_t t) {
        Rng draw = rng.child(2 * t);
        Eigen::ArrayXd signs(m);
        for (int i = 0; i < m; ++i)
            signs(i) = opts.gaussian ? draw.gaussian() : double(draw.sign());
        sups[t] = detail::signed_mass_sup(sub, p, signs, opts.probes,
                                          opts.ascent_steps,
                                          rng.child(2 * t + 1).seed());
    });
    double mean = 0.0;
    for (double v : sups) mean += v;
    mean /= opts.trials;
    double var = 0.0;
    for (double v : sups) var += (v - mean) * (v - mean);
    var = opts.trials > 1 ? var / (opts.trials - 1) : 0.0;
    return MeanStdErr{mean, std::sqrt(var / opts.trials)};
}

/// Exact average over all 2^M sign patterns (M <= 20), sharing the
/// per-pattern sup estimator with rademacher_sup.
inline double rademacher_sup_exact(const Subspace& sub, double p, int probes,
                                   std::uint64_t seed, int ascent_steps = 100) {
    const int m = sub.size();
    if (m > 20)
        throw std::invalid_argument("rademacher_sup_exact: space too large to enumerate");
    const std::uint32_t total = 1u << m;
    Rng rng(seed);
    std::vector<double> sups(total, 0.0);
    parallel_for(total, [&](std::size_t pattern) {
        Eigen::ArrayXd signs(m);
        for (int i = 0; i < m; ++i)
            signs(i) = (pattern >> i) & 1u ? -1.0 : 1.0;
        sups[pattern] = detail::signed_mass_sup(sub, p, signs, probes, ascent_steps,
                                                rng.child(pattern).seed());
    });
    double mean = 0.0;
    for (double v : sups) mean += v;
    return mean / total;
}

/// Monte Carlo estimate of the Gaussian mean width l(u): the root of
/// E ||sum_i g_i u(e_i)||^2 over standard Gaussians on the domain basis.
inline double gaussian_ell(const FiniteRankOperator& map, int trials,
                           std::uint64_t seed) {
    check_operator(map);
    Rng rng(seed);
    const int d = map.domain_dim();
    double acc = 0.0;
    for (int t = 0; t < trials; ++t) {
        Rng draw = rng.child(t);
        Eigen::VectorXd g(d);
        for (int j = 0; j < d; ++j) g(j) = draw.gaussian();
        const double nrm = image_norm(map, g);
        acc += nrm * nrm;
    }
    return std::sqrt(acc / trials);
}

/// Natural distance of the Gaussian process behind the splitting bounds:
/// delta(y,z) = (sum_i [nu_i (|y_i|^p - |z_i|^p)]^2)^(1/2).
inline double delta_distance(const Eigen::VectorXd& y, const Eigen::VectorXd& z,
                             const WeightedSpace& space, double p) {
    check_exponent(p);
    if (p == kInf)
        throw std::invalid_argument("delta_distance: requires finite p");
    if (y.size() != space.size() || z.size() != space.size())
        throw std::invalid_argument("delta_distance: size mismatch");
    double acc = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double d = space.weights()(i) * (abs_pow(y(i), p) - abs_pow(z(i), p));
        acc += d * d;
    }
    return std::sqrt(acc);
}

using Metric = std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)>;

inline Metric sup_metric() {
    return [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
        return (a - b).cwiseAbs().maxCoeff();
    };
}

inline Metric delta_metric(WeightedSpace space, double p) {
    return [space = std::move(space), p](const Eigen::VectorXd& a,
                                         const Eigen::VectorXd& b) {
        return delta_distance(a, b, space, p);
    };
}

/// Greedy farthest-point covering count of a finite sample at radius t
/// (closed balls). The count sits between the sample's covering number at t
/// and its packing-based bound at t/2, which is all the scaling checks need.
inline int covering_estimate(const std::vector<Eigen::VectorXd>& points,
                             const Metric& metric, double t) {
    if (points.empty())
        throw std::invalid_argument("covering_estimate: no points");
    std::vector<double> dist(points.size(), kInf);
    std::size_t next = 0; // first center: the first point
    int count = 0;
    while (true) {
        ++count;
        const Eigen::VectorXd& center = points[next];
        double far_dist = 0.0;
        std::size_t far_idx = 0;
        for (std::size_t i = 0; i < points.size(); ++i) {
            dist[i] = std::min(dist[i], metric(points[i], center));
            if (dist[i] > far_dist) {
                far_dist = dist[i];
                far_idx = i;
            }
        }
        if (far_dist <= t) return count;
        next = far_idx;
    }
}

struct CoveringCurve {
    std::vector<double> radii; // strictly decreasing
    std::vector<int> counts;   // nondecreasing as radii decrease

    void validate() const {
        if (radii.size() != counts.size() || radii.empty())
            throw std::invalid_argument("CoveringCurve: radii/counts mismatch");
        for (std::size_t i = 0; i + 1 < radii.size(); ++i) {
            if (!(radii[i] > radii[i + 1]))
                throw std::invalid_argument("CoveringCurve: radii must decrease");
            if (counts[i] > counts[i + 1])
                throw std::invalid_argument("CoveringCurve: counts must be nondecreasing");
        }
    }
};

inline CoveringCurve covering_curve(const std::vector<Eigen::VectorXd>& points,
                                    const Metric& metric,
                                    const std::vector<double>& radii) {
    CoveringCurve curve;
    curve.radii = radii;
    for (double t : radii)
        curve.counts.push_back(covering_estimate(points, metric, t));
    curve.validate();
    return curve;
}

/// Entropy integral by trapezoid over the curve's radii, with constant 1:
/// any fitted multiplier is reported separately, never folded in.
inline double dudley_bound(const CoveringCurve& curve) {
    curve.validate();
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < curve.radii.size(); ++i) {
        const double a = std::sqrt(std::log(double(curve.counts[i])));
        const double b = std::sqrt(std::log(double(curve.counts[i + 1])));
        acc += (curve.radii[i] - curve.radii[i + 1]) * 0.5 * (a + b);
    }
    return acc;
}

/// Least-squares slope of log log-count against log(1/t), over the curve
/// points with count > 1. This is the t-exponent of log E ~ t^(-s).
inline double fit_scaling(const CoveringCurve& curve) {
    curve.validate();
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < curve.radii.size(); ++i) {
        if (curve.counts[i] > 1) {
            xs.push_back(std::log(1.0 / curve.radii[i]));
            ys.push_back(std::log(std::log(double(curve.counts[i]))));
        }
    }
    if (xs.size() < 4)
        throw std::invalid_argument("fit_scaling: need at least 4 points with count > 1");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= xs.size();
    my /= ys.size();
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx <= 0.0)
        throw std::invalid_argument("fit_scaling: degenerate radii");
    return sxy / sxx;
}

/// Random unit-norm functions from a subspace's L_p ball boundary, as raw
/// value vectors for the covering estimators.
inline std::vector<Eigen::VectorXd> unit_ball_sample(const Subspace& sub, double p,
                                                     int count,
                                                     std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Eigen::VectorXd> points;
    points.reserve(count);
    while (static_cast<int>(points.size()) < count) {
        Eigen::VectorXd c(sub.dim());
        for (int j = 0; j < sub.dim(); ++j) c(j) = rng.gaussian();
        Eigen::VectorXd y = sub.function(c);
        const double nrm = lp_norm(y, sub.space(), p);
        if (nrm < 1e-30) continue;
        points.push_back(y / nrm);
    }
    return points;
}

} // namespace lpreduce
