#ifndef AGENCY_NUMERICS_HPP
#define AGENCY_NUMERICS_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace agency {

// Pairwise (cascade) summation. Deterministic for a fixed input order, which
// keeps Monte Carlo reductions independent of the worker count.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

struct MCEstimate {
    double mean = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

inline MCEstimate mean_se(std::span<const double> v) {
    MCEstimate out;
    out.n = v.size();
    if (v.empty()) return out;
    out.mean = pairwise_sum(v) / static_cast<double>(v.size());
    if (v.size() < 2) return out;
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - out.mean;
        sq[i] = d * d;
    }
    const double var = pairwise_sum(sq) / static_cast<double>(v.size() - 1);
    out.se = std::sqrt(var / static_cast<double>(v.size()));
    return out;
}

// Central finite difference of a scalar function of one variable.
inline double central_diff(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Run fn(i) for i in [0, n) on up to `threads` workers in fixed blocks.
// Results must be written to disjoint slots so the outcome does not depend
// on scheduling.
void parallel_for_index(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace agency

#endif  // AGENCY_NUMERICS_HPP
