#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace occtrack {

using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline constexpr double kPi = 3.141592653589793238462643383279502884;

/// Deterministic RNG used throughout; a fixed seed reproduces runs bit-exactly.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
    // 53-bit mantissa draw, stable across library versions.
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

/// Box-Muller without state caching, so sampling order is easy to reason about.
inline double normal_sample(Rng& rng, double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    const double mag = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * mag * std::cos(2.0 * kPi * u2);
}

inline int poisson_sample(Rng& rng, double rate) {
    // Knuth multiplication method; rates here are small (births, clutter).
    if (rate <= 0.0) return 0;
    const double limit = std::exp(-rate);
    double prod = 1.0;
    int count = -1;
    do {
        prod *= uniform01(rng);
        ++count;
    } while (prod > limit);
    return count;
}

inline double normal_pdf(double x, double mean, double stddev) {
    const double d = (x - mean) / stddev;
    return std::exp(-0.5 * d * d) / (stddev * std::sqrt(2.0 * kPi));
}

inline double normal_cdf(double x, double mean, double stddev) {
    return 0.5 * std::erfc(-(x - mean) / (stddev * std::sqrt(2.0)));
}

/// Mass of N(mean, stddev^2) on [lo, hi].
inline double normal_interval_mass(double lo, double hi, double mean, double stddev) {
    if (hi <= lo) return 0.0;
    return normal_cdf(hi, mean, stddev) - normal_cdf(lo, mean, stddev);
}

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

/// Shortest digit string that reads back to the same double.
inline std::string format_number(double value) {
    char buf[32];
    const auto result = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, result.ptr);
}

inline double log_sum_exp(const std::vector<double>& vals) {
    if (vals.empty()) return -std::numeric_limits<double>::infinity();
    double mx = vals[0];
    for (double v : vals) mx = std::max(mx, v);
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double v : vals) s += std::exp(v - mx);
    return mx + std::log(s);
}

}  // namespace occtrack
