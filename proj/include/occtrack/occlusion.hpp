#pragma once

#include "occtrack/components.hpp"
#include "occtrack/density.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <variant>
#include <vector>

namespace occtrack {

// ---- Pairwise occlusion kernels ----

/// Probability that one object hides another, judged from the two state
/// summaries alone (typically density means).
struct PairwiseKernel {
    std::function<double(const VecX& target, const VecX& occluder)> occlusion;
};

namespace detail {

/// Angular span [lo, hi] of a vehicle summary (lane, back edge, length) as
/// seen from a sensor at the origin; lanes sit at positive lateral offsets.
inline std::pair<double, double> angular_span(const VecX& s, const std::vector<double>& lane_y) {
    const int lane = static_cast<int>(std::lround(s(0)));
    const double y = lane_y.at(static_cast<std::size_t>(lane));
    const double lo = std::atan2(y, s(1) + s(2));  // front end, larger x, smaller angle
    const double hi = std::atan2(y, s(1));
    return {std::min(lo, hi), std::max(lo, hi)};
}

inline double interval_overlap(double alo, double ahi, double blo, double bhi) {
    return std::max(0.0, std::min(ahi, bhi) - std::max(alo, blo));
}

}  // namespace detail

/// Lane-road kernel: fraction of the target's angular span covered by an
/// occluder in a strictly nearer lane. Summaries are (lane, back, length).
inline PairwiseKernel angular_interval_kernel(std::vector<double> lane_y) {
    return {[lane_y = std::move(lane_y)](const VecX& target, const VecX& occluder) {
        const int lt = static_cast<int>(std::lround(target(0)));
        const int lo = static_cast<int>(std::lround(occluder(0)));
        if (lo >= lt) return 0.0;  // only nearer lanes block the view
        const auto [tlo, thi] = detail::angular_span(target, lane_y);
        const auto [olo, ohi] = detail::angular_span(occluder, lane_y);
        const double width = thi - tlo;
        if (width <= 0.0) return 0.0;
        return clamp01(detail::interval_overlap(tlo, thi, olo, ohi) / width);
    }};
}

namespace detail {

/// Intersection area of two axis-aligned boxes given as (cx, cy, w, h).
inline double box_intersection(const VecX& a, const VecX& b) {
    const double w = interval_overlap(a(0) - 0.5 * a(2), a(0) + 0.5 * a(2), b(0) - 0.5 * b(2),
                                      b(0) + 0.5 * b(2));
    const double h = interval_overlap(a(1) - 0.5 * a(3), a(1) + 0.5 * a(3), b(1) - 0.5 * b(3),
                                      b(1) + 0.5 * b(3));
    return w * h;
}

}  // namespace detail

/// Image-box kernel: intersection over target area, ramped by o₀, for
/// occluders whose bottom edge lies strictly lower (image y grows downward).
/// Summaries are (cx, cy, w, h, ...).
inline PairwiseKernel box_overlap_kernel(double o0 = 0.5) {
    return {[o0](const VecX& target, const VecX& occluder) {
        const double target_bottom = target(1) + 0.5 * target(3);
        const double occluder_bottom = occluder(1) + 0.5 * occluder(3);
        if (!(occluder_bottom > target_bottom)) return 0.0;
        const double area = target(2) * target(3);
        if (area <= 0.0) return 0.0;
        const double o = detail::box_intersection(target, occluder) / area;
        return clamp01(o / o0);
    }};
}

/// Occlusion probability of image box z behind the visible boxes: the
/// occludability of its source times the ramped best overlap from a box with
/// a strictly lower bottom edge. Boxes are (cx, cy, w, h).
inline double box_occlusion_prob(const VecX& z, const std::vector<VecX>& Z_visible,
                                 double occludability, double overlap_threshold = 0.5) {
    const PairwiseKernel kernel = box_overlap_kernel(overlap_threshold);
    double best = 0.0;
    for (const VecX& v : Z_visible) best = std::max(best, kernel.occlusion(z, v));
    return occludability * best;
}

// ---- Combining several occluders ----

/// Softmax-style aggregation of per-occluder occlusion probabilities:
/// exact on singletons, zero on the empty set, and strictly above the max
/// when several occluders each cover part of the target.
inline double combine_softmax(const std::vector<double>& qs, double beta) {
    double acc = 0.0;
    for (double q : qs) acc += std::expm1(beta * q);
    return clamp01(std::log1p(acc) / beta);
}

/// Independent-cover aggregation: 1 − Π(1 − q_k).
inline double combine_product(const std::vector<double>& qs) {
    double vis = 1.0;
    for (double q : qs) vis *= 1.0 - q;
    return 1.0 - vis;
}

enum class Combiner { Softmax, Product };

inline double combine_occlusion(const std::vector<double>& qs, Combiner combiner, double beta) {
    return combiner == Combiner::Softmax ? combine_softmax(qs, beta) : combine_product(qs);
}

/// Occluder digest for the expected-value approximation.
struct OccluderSummary {
    VecX mean;
    double existence = 0.0;
};

inline double expval_occlusion(const VecX& target_summary,
                               const std::vector<OccluderSummary>& occluders,
                               const PairwiseKernel& kernel, double beta,
                               Combiner combiner = Combiner::Softmax) {
    std::vector<double> qs;
    qs.reserve(occluders.size());
    for (const auto& occ : occluders)
        qs.push_back(clamp01(occ.existence * kernel.occlusion(target_summary, occ.mean)));
    return combine_occlusion(qs, combiner, beta);
}

/// Expected-value visibility of a target among Bernoulli occluders, all
/// summarized by their density means.
inline double expval_softmax_visibility(const BernoulliComponent& target,
                                        const std::vector<BernoulliComponent>& occluders,
                                        const PairwiseKernel& kernel, double beta) {
    std::vector<OccluderSummary> summaries;
    summaries.reserve(occluders.size());
    for (const auto& occ : occluders)
        summaries.push_back({density_mean(occ.density), occ.existence});
    return 1.0 - expval_occlusion(density_mean(target.density), summaries, kernel, beta,
                                  Combiner::Softmax);
}

// ---- Visibility grid ----

/// Partition of a 1-D sensor coordinate (angle or distance along the field)
/// into cells with independent visibility probabilities.
struct VisibilityGrid {
    VecX edges;  // ascending, size cells + 1
    VecX vis;    // per-cell visibility in [0,1]
};

inline VisibilityGrid uniform_grid(double lo, double hi, int cells) {
    VisibilityGrid g;
    g.edges = VecX::LinSpaced(cells + 1, lo, hi);
    g.vis = VecX::Ones(cells);
    return g;
}

/// Best visibility over the cells meeting [lo, hi]; stretches of the span
/// outside the grid count as unoccluded.
inline double grid_max_visibility(const VisibilityGrid& g, double lo, double hi) {
    if (hi < lo) std::swap(lo, hi);
    const Eigen::Index cells = g.vis.size();
    double best = (lo < g.edges(0) || hi > g.edges(cells)) ? 1.0 : 0.0;
    for (Eigen::Index c = 0; c < cells; ++c) {
        const bool meets = g.edges(c + 1) > lo && g.edges(c) < hi;
        const bool contains_point = lo == hi && g.edges(c) <= lo && lo <= g.edges(c + 1);
        if (meets || contains_point) best = std::max(best, g.vis(c));
    }
    return best;
}

/// Span of an object in the grid coordinate, given its state.
using SpanFn = std::function<std::pair<double, double>(const VecX&)>;

namespace detail {

/// P(the occluder's span covers point t) under the occluder's density,
/// evaluated at particle/support points or sigma points.
inline double cover_probability(const StateDensity& density, const SpanFn& span, double t) {
    const auto covered = [&](const VecX& x) {
        const auto [lo, hi] = span(x);
        return (std::min(lo, hi) <= t && t <= std::max(lo, hi)) ? 1.0 : 0.0;
    };
    return std::visit(
        [&](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, GaussianDensity>) {
                const SigmaPoints sp = sigma_points(d);
                double p = 0.0;
                for (Eigen::Index k = 0; k < sp.weights.size(); ++k)
                    p += sp.weights(k) * covered(sp.points.col(k));
                return p;
            } else if constexpr (std::is_same_v<T, ParticleDensity>) {
                double p = 0.0;
                for (Eigen::Index k = 0; k < d.weights.size(); ++k)
                    p += d.weights(k) * covered(d.points.col(k));
                return p;
            } else {
                double p = 0.0;
                for (Eigen::Index k = 0; k < d.masses.size(); ++k)
                    p += d.masses(k) * covered(d.support.col(k));
                return p;
            }
        },
        density);
}

}  // namespace detail

/// Thin each cell by every occluder independently:
/// vis_c ← vis_c · Π_k (1 − r_k · P(occluder k covers the cell center)).
/// Callers pass only occluders nearer than the grid's subjects.
inline VisibilityGrid grid_visibility_update(
    VisibilityGrid grid, const std::vector<std::pair<StateDensity, double>>& occluders,
    const SpanFn& span) {
    for (Eigen::Index c = 0; c < grid.vis.size(); ++c) {
        const double center = 0.5 * (grid.edges(c) + grid.edges(c + 1));
        for (const auto& [density, existence] : occluders)
            grid.vis(c) *= 1.0 - existence * detail::cover_probability(density, span, center);
    }
    return grid;
}

// ---- Strategy taxonomy ----

struct NoOcclusion {};

/// Fixed per-state visibility folded into the detection probability.
struct ObjectWiseStatic {
    std::function<double(const VecX&)> visibility;
};

/// Expected-value approximation: every track occludes through its mean.
struct ObjectWiseExpval {
    PairwiseKernel kernel;
    double beta = 4.0;
    Combiner combiner = Combiner::Softmax;
};

/// Precomputed visibility grids; locate(x) names the grid a state reads from
/// and its span inside it. Several grids let callers exclude self-occlusion
/// (one grid per lane, each thinned only by nearer lanes).
struct ObjectWiseGrid {
    std::vector<VisibilityGrid> grids;
    std::function<std::pair<int, std::pair<double, double>>(const VecX&)> locate;

    double visibility(const VecX& x) const {
        const auto [idx, span] = locate(x);
        return grid_max_visibility(grids.at(static_cast<std::size_t>(idx)), span.first,
                                   span.second);
    }
};

/// Occlusion judged in measurement space: a hypothetical measurement is
/// hidden with probability 1 − meas_visibility(z, visible set). The optional
/// override supplies a closed-form P(measurement from state x is hidden)
/// when the likelihood admits one.
template <class M>
struct MeasurementWise {
    std::function<double(const M&, const std::vector<M>&)> meas_visibility;
    std::function<double(const VecX&, const std::vector<M>&)> occluded_prob_override;
};

template <class M>
using OcclusionStrategy =
    std::variant<NoOcclusion, ObjectWiseStatic, ObjectWiseExpval, ObjectWiseGrid,
                 MeasurementWise<M>>;

/// Fold a static visibility into the detection probability.
inline std::function<double(const VecX&)> static_owo_detection(
    std::function<double(const VecX&)> detection, std::function<double(const VecX&)> visibility) {
    return [detection = std::move(detection), visibility = std::move(visibility)](const VecX& x) {
        return detection(x) * visibility(x);
    };
}

// ---- Measurement-wise occlusion terms ----

/// P(the measurement born at state x is hidden behind Z_visible):
/// ∫ p(z|x)·(1 − vis(z, Z_visible)) dz, by exact sum over a finite
/// measurement support, sigma points in measurement space for a linear
/// Gaussian likelihood, or the strategy's closed-form override.
template <class M>
double occluded_meas_prob(const MeasurementModel<M>& model, const MeasurementWise<M>& strategy,
                          const VecX& x, const std::vector<M>& Z_visible) {
    if (strategy.occluded_prob_override) return strategy.occluded_prob_override(x, Z_visible);
    if (!model.measurement_support.empty()) {
        double p = 0.0;
        for (const M& z : model.measurement_support)
            p += model.likelihood(x, z) * (1.0 - strategy.meas_visibility(z, Z_visible));
        return clamp01(p);
    }
    if constexpr (std::is_same_v<M, VecX>) {
        if (model.linear_obs) {
            const SigmaPoints sp =
                sigma_points(GaussianDensity{model.linear_obs->H * x, model.linear_obs->R});
            double p = 0.0;
            for (Eigen::Index k = 0; k < sp.weights.size(); ++k)
                p += sp.weights(k) *
                     (1.0 - strategy.meas_visibility(sp.points.col(k), Z_visible));
            return clamp01(p);
        }
    }
    throw UndefinedValueError(
        "occluded_meas_prob: need a finite measurement support, a linear Gaussian "
        "observation, or an occluded_prob_override");
}

/// Effective miss probability under measurement-wise occlusion:
/// x ↦ 1 − P_D(x) + P_D(x)·occ·P(measurement hidden | x). occ is the
/// component's occludability (1 when unset).
template <class M>
std::function<double(const VecX&)> mwo_augmented_miss(const BernoulliComponent& comp,
                                                      const MeasurementModel<M>& model,
                                                      const std::vector<M>& Z_visible,
                                                      const MeasurementWise<M>& strategy) {
    const double occ = comp.occ_or(1.0);
    return [model, strategy, Z_visible, occ](const VecX& x) {
        const double pd = model.detect_prob(x);
        if (pd <= 0.0) return 1.0;
        if (occ <= 0.0) return 1.0 - pd;
        return 1.0 - pd + pd * occ * occluded_meas_prob(model, strategy, x, Z_visible);
    };
}

/// κ·∫ p_F(z)·(1 − vis(z, Z_visible)) dz — the exponent of the occluded
/// false-positive evidence factor.
template <class M>
double occluded_clutter_exponent(const MeasurementModel<M>& model,
                                 const std::vector<M>& Z_visible,
                                 const std::function<double(const M&, const std::vector<M>&)>&
                                     meas_visibility) {
    if (model.clutter_rate <= 0.0) return 0.0;
    const auto hidden = [&](const M& z) { return 1.0 - meas_visibility(z, Z_visible); };
    double integral = 0.0;
    if (model.clutter_integrator) {
        integral = model.clutter_integrator(hidden);
    } else if (!model.measurement_support.empty()) {
        for (const M& z : model.measurement_support)
            integral += model.clutter_density(z) * hidden(z);
    } else {
        throw UndefinedValueError(
            "occluded_clutter_exponent: need a clutter_integrator or a finite "
            "measurement support");
    }
    return model.clutter_rate * integral;
}

/// exp of the above. Multiplies the measurement-set evidence only; posteriors
/// never see it.
template <class M>
double occluded_clutter_factor(double kappa, const std::function<double(const M&)>& clutter_density,
                               const std::vector<M>& Z_visible,
                               const std::function<double(const M&, const std::vector<M>&)>&
                                   meas_visibility,
                               const std::function<double(const std::function<double(const M&)>&)>&
                                   clutter_integrator = nullptr,
                               const std::vector<M>& measurement_support = {}) {
    MeasurementModel<M> shim;
    shim.clutter_rate = kappa;
    shim.clutter_density = clutter_density;
    shim.clutter_integrator = clutter_integrator;
    shim.measurement_support = measurement_support;
    return std::exp(occluded_clutter_exponent(shim, Z_visible, meas_visibility));
}

}  // namespace occtrack
