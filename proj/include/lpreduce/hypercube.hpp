#pragma once

#include <Eigen/Dense>

#include <bit>
#include <cstdint>
#include <vector>

#include "lpreduce/measure.hpp"
#include "lpreduce/summing.hpp"

namespace lpreduce {

/// Walsh-tail subspace on the Boolean cube {-1,1}^n: the span of characters
/// w_S with |S| >= n - m, under the uniform measure on all 2^n points.
/// Entries are exactly +-1, so character orthonormality is exact.
struct WalshSpace {
    int cube_n = 0;
    WeightedSpace space;              // uniform on 2^n points
    std::vector<std::uint32_t> subsets; // bitmasks S, |S| >= n - m
    Eigen::MatrixXd basis;            // 2^n x dim, basis(g, j) = w_{S_j}(g)

    int dim() const { return static_cast<int>(subsets.size()); }
};

/// Builds the Walsh tail for 0 <= m <= n <= 14. Point g is indexed by the
/// bits of its row: bit i set means g_i = -1, so w_S(g) = (-1)^popcount(g & S).
inline WalshSpace walsh_space(int n, int m) {
    if (n < 1 || n > 14)
        throw std::invalid_argument("walsh_space: need 1 <= n <= 14");
    if (m < 0 || m > n)
        throw std::invalid_argument("walsh_space: need 0 <= m <= n");

    std::vector<std::uint32_t> subsets;
    const std::uint32_t full = (1u << n) - 1;
    // descending |S|, ascending mask within each size
    for (int size = n; size >= n - m; --size)
        for (std::uint32_t s = 0; s <= full; ++s)
            if (std::popcount(s) == size) subsets.push_back(s);

    const int points = 1 << n;
    Eigen::MatrixXd basis(points, subsets.size());
    for (std::size_t j = 0; j < subsets.size(); ++j)
        for (int g = 0; g < points; ++g)
            basis(g, j) =
                (std::popcount(static_cast<std::uint32_t>(g) & subsets[j]) & 1) ? -1.0
                                                                                : 1.0;
    WeightedSpace space = WeightedSpace::uniform(points);
    return WalshSpace{n, std::move(space), std::move(subsets), std::move(basis)};
}

/// Formal identity from the Walsh tail with the sup norm into L_p of the
/// uniform cube measure. Its operator norm is 1.
inline FiniteRankOperator tail_identity_operator(const WalshSpace& ws, double p) {
    check_exponent(p);
    Subspace embedding(ws.space, ws.basis);
    return FiniteRankOperator{ws.basis, DomainNorm{SupOnPoints{std::move(embedding)}},
                              ws.space, p};
}

/// Saturation curve of the tail identity: the qualitative signature sought
/// is growth of pi_p^(k) well past k = dim E.
inline std::vector<CurvePoint> growth_experiment(int n, int m, double p,
                                                 const std::vector<int>& ks,
                                                 std::uint64_t seed,
                                                 const PiOptions& base = {}) {
    const WalshSpace ws = walsh_space(n, m);
    return saturation_curve(tail_identity_operator(ws, p), ks, p, seed, base);
}

} // namespace lpreduce
