#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "lpreduce/lewis.hpp"
#include "lpreduce/measure.hpp"

namespace lpreduce {

struct SplitResult {
    WeightedSpace space;                 // size M, every split piece in [2/N, 4/N]
    std::vector<std::vector<int>> sigma; // per source atom, its piece indices
    std::vector<int> embed;              // piece -> source atom (realizes J_p)
};

/// Splits every atom of mass above 4/N into ceil(m N / 4) equal pieces and
/// copies function values onto the pieces. All L_r norms are preserved and
/// N <= M <= 3N/2.
inline std::pair<SplitResult, Subspace> split_atoms(const Subspace& sub) {
    const int n_atoms = sub.size();
    const Eigen::VectorXd& tau = sub.space().weights();
    const double threshold = 4.0 / n_atoms;

    std::vector<std::vector<int>> sigma(n_atoms);
    std::vector<int> embed;
    std::vector<double> masses;
    for (int j = 0; j < n_atoms; ++j) {
        const double m = tau(j);
        int pieces = 1;
        if (m > threshold)
            pieces = static_cast<int>(std::ceil(m * n_atoms / 4.0));
        const double piece_mass = m / pieces;
        for (int q = 0; q < pieces; ++q) {
            sigma[j].push_back(static_cast<int>(embed.size()));
            embed.push_back(j);
            // last piece absorbs the rounding so group masses are exact
            masses.push_back(q + 1 == pieces ? m - piece_mass * (pieces - 1)
                                             : piece_mass);
        }
    }

    const int m_atoms = static_cast<int>(embed.size());
    Eigen::VectorXd nu(m_atoms);
    Eigen::MatrixXd basis(m_atoms, sub.dim());
    for (int i = 0; i < m_atoms; ++i) {
        nu(i) = masses[i];
        basis.row(i) = sub.basis().row(embed[i]);
    }
    WeightedSpace space(std::move(nu));
    Subspace image(space, std::move(basis));
    return {SplitResult{std::move(space), std::move(sigma), std::move(embed)},
            std::move(image)};
}

struct PartitionPair {
    std::vector<int> part1, part2;
    std::array<double, 2> ratios{std::numeric_limits<double>::quiet_NaN(),
                                 std::numeric_limits<double>::quiet_NaN()};
    int draws = 0; // sign vectors consumed before the cardinality cap held
};

/// Uniform random sign partition, redrawn until both parts have cardinality
/// at most (9/16) M. Fails after 1000 draws.
inline PartitionPair sign_partition(const WeightedSpace& space, std::uint64_t seed) {
    const int m = space.size();
    const double cap = 9.0 * m / 16.0;
    Rng rng(seed);
    int best_excess = m;
    for (int attempt = 1; attempt <= 1000; ++attempt) {
        PartitionPair pair;
        for (int i = 0; i < m; ++i) {
            if (rng.sign() > 0)
                pair.part1.push_back(i);
            else
                pair.part2.push_back(i);
        }
        const auto larger = std::max(pair.part1.size(), pair.part2.size());
        if (static_cast<double>(larger) <= cap) {
            pair.draws = attempt;
            return pair;
        }
        best_excess = std::min(best_excess, static_cast<int>(larger));
    }
    throw ConvergenceError("sign_partition: no balanced draw within 1000 attempts",
                           best_excess);
}

namespace detail {

struct DistortionDetail {
    double theta;                 // max over parts and probed directions
    std::array<double, 2> ratios; // per-part maxima
};

/// theta statistic of a partition: the largest fraction of a function's
/// p-th power norm that either part can capture, maximized over random unit
/// directions in the subspace with ascent refinement from the best starts.
/// A lower bound on the true supremum.
inline DistortionDetail partition_distortion_detail(const Subspace& sub,
                                                    const PartitionPair& pair,
                                                    double p, int probes,
                                                    std::uint64_t seed) {
    if (!(p >= 1.0) || p == kInf)
        throw std::invalid_argument("partition_distortion: requires finite p");
    if (pair.part1.size() + pair.part2.size() != static_cast<std::size_t>(sub.size()))
        throw std::invalid_argument("partition_distortion: partition does not cover the space");

    const int n = sub.dim();
    const Eigen::ArrayXd w = sub.space().weights().array();
    Eigen::ArrayXd mask1 = Eigen::ArrayXd::Zero(sub.size());
    for (int i : pair.part1) mask1(i) = 1.0;

    // fraction of ||y||_p^p carried by part1, for y = basis * c
    auto part1_fraction = [&](const Eigen::VectorXd& c) {
        const Eigen::VectorXd y = sub.basis() * c;
        double total = 0.0, part = 0.0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double t = w(i) * abs_pow(y(i), p);
            total += t;
            part += mask1(i) * t;
        }
        return total > 0.0 ? part / total : 0.5;
    };

    std::array<double, 2> ratios{0.0, 0.0};
    Rng rng(seed);
    std::vector<Eigen::VectorXd> starts;
    double best_dev = -1.0;
    Eigen::VectorXd best_c;
    for (int s = 0; s < probes; ++s) {
        Eigen::VectorXd c(n);
        for (int j = 0; j < n; ++j) c(j) = rng.gaussian();
        if (c.norm() < 1e-30) continue;
        c.normalize();
        const double r1 = part1_fraction(c);
        ratios[0] = std::max(ratios[0], r1);
        ratios[1] = std::max(ratios[1], 1.0 - r1);
        if (std::abs(r1 - 0.5) > best_dev) {
            best_dev = std::abs(r1 - 0.5);
            best_c = c;
        }
    }
    for (int j = 0; j < n; ++j) {
        Eigen::VectorXd c = Eigen::VectorXd::Unit(n, j);
        const double r1 = part1_fraction(c);
        ratios[0] = std::max(ratios[0], r1);
        ratios[1] = std::max(ratios[1], 1.0 - r1);
    }

    // refine toward each part's supremum from the most unbalanced probe
    if (n > 1 && best_c.size() == n) {
        for (int side = 0; side < 2; ++side) {
            auto value_fn = [&](const Eigen::VectorXd& c) {
                const double r1 = part1_fraction(c);
                return side == 0 ? r1 : 1.0 - r1;
            };
            auto grad_fn = [&](const Eigen::VectorXd& c) {
                Eigen::ArrayXd y = (sub.basis() * c).array();
                Eigen::ArrayXd contrib = w * y.abs().pow(p);
                const double total = contrib.sum();
                const double part = (mask1 * contrib).sum();
                // gradient of log(side fraction) - log(total)
                Eigen::ArrayXd base = p * w * y.sign() * y.abs().pow(p - 1.0);
                const double frac = side == 0 ? part : total - part;
                Eigen::ArrayXd g_num = side == 0 ? (mask1 * base).eval()
                                                 : ((1.0 - mask1) * base).eval();
                return Eigen::VectorXd(
                    sub.basis().transpose() *
                    (g_num / std::max(frac, 1e-300) - base / total).matrix());
            };
            Eigen::VectorXd c = best_c;
            const double refined = sphere_ascent(c, value_fn, grad_fn, 200, 1e-12);
            ratios[side] = std::max(ratios[side], refined);
        }
    }
    return DistortionDetail{std::max(ratios[0], ratios[1]), ratios};
}

} // namespace detail

inline double partition_distortion(const Subspace& sub, const PartitionPair& pair,
                                   double p, int probes, std::uint64_t seed) {
    return detail::partition_distortion_detail(sub, pair, p, probes, seed).theta;
}

struct HalveResult {
    PartitionPair pair;
    Subspace restricted; // part1 rows, measure renormalized
    double theta;
    double kept_mass; // nu(part1) before renormalization
    int retries;      // rejected draws across both loops
};

/// Draws sign partitions until the measured distortion statistic falls at or
/// below theta_max, then keeps part1 with its measure renormalized.
inline HalveResult halve(const Subspace& sub, double p, double theta_max,
                         int retry_budget, int probes, std::uint64_t seed) {
    if (!(theta_max > 0.5) || !(theta_max < 1.0))
        throw std::invalid_argument("halve: theta_max must lie in (1/2, 1)");
    const Rng rng(seed);
    double best_theta = kInf;
    int rejections = 0;
    for (int attempt = 0; attempt < retry_budget; ++attempt) {
        PartitionPair pair = sign_partition(sub.space(), rng.child(2 * attempt).seed());
        rejections += pair.draws - 1;
        const auto detail = detail::partition_distortion_detail(
            sub, pair, p, probes, rng.child(2 * attempt + 1).seed());
        pair.ratios = detail.ratios;
        best_theta = std::min(best_theta, detail.theta);
        if (detail.theta > theta_max) {
            ++rejections;
            continue;
        }
        Eigen::VectorXd kept(pair.part1.size());
        Eigen::MatrixXd basis(pair.part1.size(), sub.dim());
        for (std::size_t i = 0; i < pair.part1.size(); ++i) {
            kept(static_cast<Eigen::Index>(i)) = sub.space().weights()(pair.part1[i]);
            basis.row(static_cast<Eigen::Index>(i)) = sub.basis().row(pair.part1[i]);
        }
        const double mass = kept.sum();
        try {
            Subspace restricted(WeightedSpace(kept / mass), std::move(basis));
            return HalveResult{std::move(pair), std::move(restricted), detail.theta,
                               mass, rejections};
        } catch (const std::invalid_argument&) {
            // restriction lost rank; treat as a rejected partition
            ++rejections;
        }
    }
    throw ConvergenceError("halve: retry budget exhausted", best_theta);
}

struct ReductionStage {
    int size_before = 0;
    int size_after = 0;
    double beta_residual = 0.0;
    double theta = 0.0; // accepted partition ratio
    int retries = 0;
    double kept_mass = 0.0;
    double distortion = 1.0; // (2 theta)^(1/p)
};

struct ReductionTrace {
    std::vector<ReductionStage> stages;
    double cumulative_distortion = 1.0;
    std::optional<Subspace> final_subspace;

    const WeightedSpace& final_space() const { return final_subspace->space(); }
    const Eigen::MatrixXd& final_basis() const { return final_subspace->basis(); }
};

/// reduce() failure: carries the stages completed before halving gave up.
class ReductionError : public ConvergenceError {
public:
    ReductionError(const std::string& msg, double best_theta, ReductionTrace partial)
        : ConvergenceError(msg, best_theta), partial_trace(std::move(partial)) {}

    ReductionTrace partial_trace;
};

/// theta_max per stage: 1/2 + c sqrt(n / size), clamped below the cap. The
/// constant telescopes the per-stage factors into the target distortion the
/// same way the geometric series in the iterated reduction does.
struct ThetaSchedule {
    double c = 4.0;
    double cap = 0.98;

    double operator()(int n, int size) const {
        return std::min(0.5 + c * std::sqrt(double(n) / double(size)), cap);
    }
};

struct ReduceOptions {
    ThetaSchedule schedule{};
    int retry_budget = 64;
    int probes = 256;
    LewisOptions lewis{};
};

/// Iterated reduction: change to the blended Lewis density, split heavy
/// atoms, halve by an accepted sign partition, and repeat until the space
/// has at most target_m atoms. Coefficient vectors index the same functions
/// in every stage, so a direction's norms before and after can be compared
/// directly through the returned trace.
inline ReductionTrace reduce(const Subspace& sub, double p, int target_m,
                             std::uint64_t seed, const ReduceOptions& opts = {}) {
    if (p == 2.0 || !(p > 1.0) || !(p < kInf))
        throw std::invalid_argument("reduce: requires p in (1,2) or (2,inf)");
    if (target_m < sub.dim())
        throw std::invalid_argument("reduce: target_m must be at least dim");

    ReductionTrace trace;
    trace.final_subspace = sub;
    Rng rng(seed);
    int stage_index = 0;
    while (trace.final_subspace->size() > target_m) {
        const Subspace& cur = *trace.final_subspace;
        ReductionStage stage;
        stage.size_before = cur.size();

        const LewisResult lw = lewis_density(cur, p, opts.lewis);
        stage.beta_residual = lw.residual;
        const Subspace tilted = change_density(cur, blend_density(lw.beta), p);
        auto [split, image] = split_atoms(tilted);
        const double theta_max = opts.schedule(cur.dim(), image.size());
        try {
            HalveResult hr = halve(image, p, theta_max, opts.retry_budget,
                                   opts.probes, rng.child(stage_index).seed());
            stage.theta = hr.theta;
            stage.retries = hr.retries;
            stage.kept_mass = hr.kept_mass;
            stage.size_after = hr.restricted.size();
            stage.distortion = std::pow(2.0 * hr.theta, 1.0 / p);
            trace.cumulative_distortion *= stage.distortion;
            trace.stages.push_back(stage);
            trace.final_subspace = std::move(hr.restricted);
        } catch (const ConvergenceError& e) {
            throw ReductionError("reduce: halving failed at stage " +
                                     std::to_string(stage_index) + ": " + e.what(),
                                 e.best(), std::move(trace));
        }
        ++stage_index;
    }
    return trace;
}

} // namespace lpreduce
