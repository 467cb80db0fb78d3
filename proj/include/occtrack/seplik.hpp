#pragma once

#include "occtrack/components.hpp"
#include "occtrack/density.hpp"
#include "occtrack/errors.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace occtrack {

/// One return of a scanning range sensor.
struct RangeMeasurement {
    double z = 0.0;
};

enum class RangeGateClass { Detected, FrontMissed, Behind };

namespace detail {

struct PredictedRange {
    double zhat = 0.0;
    double stddev = 0.0;
    double detect_weight = 0.0;  // ∫ p(x) P_D(x) dx
};

/// Detection-weighted mean and spread of the predicted range. Every
/// representation is reduced to weighted points (sigma points for a
/// Gaussian), so a constant detection reproduces the linear moments exactly.
inline PredictedRange predicted_range(const BernoulliComponent& comp,
                                      const MeasurementModel<RangeMeasurement>& model) {
    if (!model.linear_obs)
        throw DegenerateModelError("predicted_range: needs a linear range observation");
    const MatX& H = model.linear_obs->H;
    const double R = model.linear_obs->R(0, 0);

    MatX points;
    VecX base;
    std::visit(
        [&](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, GaussianDensity>) {
                const SigmaPoints sp = sigma_points(d);
                points = sp.points;
                base = sp.weights;
            } else if constexpr (std::is_same_v<T, ParticleDensity>) {
                points = d.points;
                base = d.weights;
            } else {
                points = d.support;
                base = d.masses;
            }
        },
        comp.density);

    PredictedRange out;
    VecX w = base;
    for (Eigen::Index k = 0; k < w.size(); ++k)
        w(k) *= model.detect_prob(points.col(k));
    out.detect_weight = w.sum();
    if (out.detect_weight <= 0.0) return out;

    double mean = 0.0, second = 0.0;
    for (Eigen::Index k = 0; k < w.size(); ++k) {
        const double h = (H * points.col(k))(0);
        mean += w(k) * h;
        second += w(k) * h * h;
    }
    mean /= out.detect_weight;
    second /= out.detect_weight;
    out.zhat = mean;
    out.stddev = std::sqrt(std::max(second - mean * mean, 0.0) + R);
    return out;
}

}  // namespace detail

/// Sorts a component against one range return: near the predicted range it
/// was detected, nearer than the return it went unseen in open view, farther
/// it sat behind the return's source.
inline RangeGateClass zhat_gate(const BernoulliComponent& comp, const RangeMeasurement& z,
                                const MeasurementModel<RangeMeasurement>& model,
                                double gate = 3.0) {
    const auto predicted = detail::predicted_range(comp, model);
    if (predicted.detect_weight <= 0.0) return RangeGateClass::Behind;
    if (std::abs(predicted.zhat - z.z) <= gate * predicted.stddev) return RangeGateClass::Detected;
    return predicted.zhat < z.z ? RangeGateClass::FrontMissed : RangeGateClass::Behind;
}

/// Range update under deterministic nearer-measurement occlusion with
/// separated objects: the one gated component takes the detection, components
/// in front of the return take a missed-detection update, and components
/// behind it are untouched.
inline MultiBernoulli seplik_update(const MultiBernoulli& prior, const RangeMeasurement& z,
                                    const MeasurementModel<RangeMeasurement>& model,
                                    double gate = 3.0) {
    MultiBernoulli post = prior;
    int detected = -1;
    for (std::size_t i = 0; i < post.components.size(); ++i) {
        BernoulliComponent& comp = post.components[i];
        switch (zhat_gate(comp, z, model, gate)) {
            case RangeGateClass::Behind:
                break;
            case RangeGateClass::Detected: {
                if (detected >= 0)
                    throw SeparabilityError(
                        "seplik_update: two components claim the same range return");
                detected = static_cast<int>(i);
                StateWeight weight{PointwiseWeight{[&model, &z](const VecX& x) {
                    return model.detect_prob(x) * model.likelihood(x, z);
                }}};
                if (model.linear_obs && model.constant_detection &&
                    std::holds_alternative<GaussianDensity>(comp.density)) {
                    VecX zv(1);
                    zv << z.z;
                    weight = GaussianWeight{model.linear_obs->H, model.linear_obs->R, zv, 1.0};
                }
                comp.density = density_update(comp.density, weight).posterior;
                comp.existence = 1.0;
                break;
            }
            case RangeGateClass::FrontMissed: {
                const double r = comp.existence;
                if (model.constant_detection) {
                    const double miss = 1.0 - *model.constant_detection;
                    const double lambda0 = (1.0 - r) + r * miss;
                    comp.existence = lambda0 > 0.0 ? r * miss / lambda0 : 0.0;
                    break;
                }
                const auto miss = miss_mass(
                    comp, [&model](const VecX& x) { return 1.0 - model.detect_prob(x); });
                comp.existence = miss.lambda0 > 0.0 ? r * miss.miss_integral / miss.lambda0 : 0.0;
                if (miss.density_valid && comp.existence > 0.0)
                    comp.density = miss.miss_density;
                break;
            }
        }
    }
    return post;
}

}  // namespace occtrack
