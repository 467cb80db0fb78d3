#pragma once

#include "occtrack/assignment.hpp"
#include "occtrack/common.hpp"
#include "occtrack/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

namespace occtrack {

struct GospaParams {
    double cutoff = 5.0;     // c > 0
    double order = 1.0;      // p >= 1
    double card_alpha = 2.0;  // alpha in (0, 2]
};

/// total is the metric value; localization is the matched-pair part in the
/// same units (p-th root of its power sum); missed and false_alarm are the
/// raw additive penalties, so total^p = localization^p + missed + false_alarm.
struct GospaDecomposition {
    double total = 0.0;
    double localization = 0.0;
    double missed = 0.0;
    double false_alarm = 0.0;
    int num_matched = 0;
};

template <class T>
using BaseMetric = std::function<double(const T&, const T&)>;

/// Optimal-subpattern distance between two finite sets: the best partial
/// assignment pays base-distance^p per matched pair and cutoff^p/alpha per
/// unmatched element on either side.
template <class T>
GospaDecomposition gospa(const std::vector<T>& truth, const std::vector<T>& estimate,
                         const BaseMetric<T>& base, const GospaParams& params = {}) {
    if (!(params.cutoff > 0.0) || !(params.order >= 1.0) || !(params.card_alpha > 0.0) ||
        !(params.card_alpha <= 2.0))
        throw std::invalid_argument("gospa: parameters out of range");
    const int n = static_cast<int>(truth.size());
    const int m = static_cast<int>(estimate.size());
    const double p = params.order;
    const double unmatched = std::pow(params.cutoff, p) / params.card_alpha;

    // Pad to (n+m)x(m+n): dummy columns drop a truth element, dummy rows a
    // reported one, and the dummy-dummy corner is free.
    MatX cost = MatX::Zero(n + m, m + n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            cost(i, j) = std::pow(base(truth[static_cast<std::size_t>(i)],
                                       estimate[static_cast<std::size_t>(j)]),
                                  p);
    cost.block(0, m, n, n).setConstant(unmatched);
    cost.block(n, 0, m, m).setConstant(unmatched);

    const std::vector<int> row_to_col = min_cost_assignment(cost);
    GospaDecomposition out;
    std::vector<double> matched_costs;
    for (int i = 0; i < n; ++i) {
        if (row_to_col[static_cast<std::size_t>(i)] < m) {
            matched_costs.push_back(cost(i, row_to_col[static_cast<std::size_t>(i)]));
            ++out.num_matched;
        }
    }
    out.missed = unmatched * (n - out.num_matched);
    // Summing in sorted order keeps gospa(A,B) and gospa(B,A) bit-identical.
    std::sort(matched_costs.begin(), matched_costs.end());
    double loc_power = 0.0;
    for (double c : matched_costs) loc_power += c;
    out.false_alarm = unmatched * (m - out.num_matched);
    out.localization = std::pow(loc_power, 1.0 / p);
    out.total = std::pow(loc_power + out.missed + out.false_alarm, 1.0 / p);
    return out;
}

inline double euclidean_metric(const VecX& a, const VecX& b) { return (a - b).norm(); }

/// Axis-aligned box as (left, top, width, height).
inline double iou(const VecX& a, const VecX& b) {
    const double w = std::min(a(0) + a(2), b(0) + b(2)) - std::max(a(0), b(0));
    const double h = std::min(a(1) + a(3), b(1) + b(3)) - std::max(a(1), b(1));
    if (w <= 0.0 || h <= 0.0) return 0.0;
    const double inter = w * h;
    return inter / (a(2) * a(3) + b(2) * b(3) - inter);
}

inline double box_distance(const VecX& a, const VecX& b) { return 1.0 - iou(a, b); }

/// Signed relative cardinality error over a run: negative when the tracker
/// under-counts.
inline double cardinality_ratio(const std::vector<int>& truth_counts,
                                const std::vector<int>& estimate_counts) {
    if (truth_counts.size() != estimate_counts.size())
        throw std::invalid_argument("cardinality_ratio: traces differ in length");
    long truth_total = 0, estimate_total = 0;
    for (int c : truth_counts) truth_total += c;
    for (int c : estimate_counts) estimate_total += c;
    if (truth_total == 0)
        throw UndefinedValueError("cardinality_ratio: no truth objects in the trace");
    return static_cast<double>(estimate_total - truth_total) / static_cast<double>(truth_total);
}

}  // namespace occtrack
