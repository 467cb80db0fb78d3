#pragma once

#include "occtrack/density.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

namespace occtrack {

/// One potential object: existence probability plus a state density.
/// occludability is the chance that the object's measurement is of the kind
/// that other measurements can hide; unset means it has never been informed.
struct BernoulliComponent {
    double existence = 0.0;
    StateDensity density;
    std::optional<double> occludability;

    double occ_or(double fallback = 1.0) const { return occludability.value_or(fallback); }
};

struct MultiBernoulli {
    std::vector<BernoulliComponent> components;
};

/// intensity(x) = rate * shape(x); shape integrates to one.
struct PoissonIntensity {
    double rate = 0.0;
    StateDensity shape;
};

struct WeightedComponent {
    double weight = 0.0;
    BernoulliComponent component;
};

using ComponentMixture = std::vector<WeightedComponent>;

using TrackLabel = std::int64_t;

struct Track {
    TrackLabel label = 0;
    ComponentMixture components;  // weights sum to 1

    double existence() const {
        double r = 0.0;
        for (const auto& wc : components) r += wc.weight * wc.component.existence;
        return r;
    }

    /// Existence-weighted occludability, or the plain weighted mean when the
    /// track has no existence mass.
    double occludability() const {
        double num = 0.0, den = 0.0, flat = 0.0;
        for (const auto& wc : components) {
            num += wc.weight * wc.component.existence * wc.component.occ_or();
            den += wc.weight * wc.component.existence;
            flat += wc.weight * wc.component.occ_or();
        }
        return den > 0.0 ? num / den : flat;
    }

    StateDensity merged_density() const;
};

/// Poisson intensity for yet-undetected objects plus labeled Bernoulli tracks.
struct PMBState {
    PoissonIntensity undetected;
    std::vector<Track> tracks;
    TrackLabel next_label = 1;
};

/// Standard single-detection sensor description, templated on the
/// measurement payload type.
template <class M>
struct MeasurementModel {
    std::function<double(const VecX&)> detection;             // P_D(x)
    std::function<double(const VecX&, const M&)> likelihood;  // p(z|x)
    double clutter_rate = 0.0;                                // kappa
    std::function<double(const M&)> clutter_density;          // p_F(z)

    /// Fast paths. constant_detection short-circuits P_D evaluation; a linear
    /// observation enables conjugate Gaussian updates when M is a vector; a
    /// finite measurement support enables exact occlusion integrals on
    /// discrete spaces.
    std::optional<double> constant_detection;
    std::optional<LinearGaussianObs> linear_obs;
    std::vector<M> measurement_support;

    /// Integrates g against the clutter spatial density: ∫ p_F(z)·g(z) dz.
    /// Needed only by occlusion-aware evidence terms; when absent, a finite
    /// measurement_support is summed instead.
    std::function<double(const std::function<double(const M&)>&)> clutter_integrator;

    double detect_prob(const VecX& x) const {
        return constant_detection ? *constant_detection : detection(x);
    }
};

struct MissMassResult {
    double lambda0 = 0.0;  // 1 - r + r * ∫ p(x) miss(x) dx
    double miss_integral = 0.0;
    StateDensity miss_density;
    bool density_valid = true;
};

/// Missed-detection weight of a Bernoulli under an effective miss function
/// (values in [0,1]). When the miss integral vanishes the returned density is
/// the prior and flagged invalid; lambda0 is still exact.
inline MissMassResult miss_mass(const BernoulliComponent& comp,
                                const std::function<double(const VecX&)>& effective_miss) {
    MissMassResult out;
    try {
        auto upd = density_update(comp.density, StateWeight{PointwiseWeight{effective_miss}});
        out.miss_integral = upd.mass;
        out.miss_density = std::move(upd.posterior);
    } catch (const ZeroSupportError&) {
        out.miss_integral = 0.0;
        out.miss_density = comp.density;
        out.density_valid = false;
    }
    out.lambda0 = 1.0 - comp.existence + comp.existence * out.miss_integral;
    return out;
}

namespace detail {

/// True when every density in the mixture is a particle (resp. discrete)
/// density over the exact same point set, so the mixture collapses without
/// approximation by pooling weights.
template <class D>
bool shared_support(const ComponentMixture& mixture) {
    const auto* first = std::get_if<D>(&mixture.front().component.density);
    if (!first) return false;
    for (std::size_t k = 1; k < mixture.size(); ++k) {
        const auto* dk = std::get_if<D>(&mixture[k].component.density);
        if (!dk) return false;
        if constexpr (std::is_same_v<D, ParticleDensity>) {
            if (dk->points.rows() != first->points.rows() ||
                dk->points.cols() != first->points.cols() || dk->points != first->points)
                return false;
        } else {
            if (dk->support.rows() != first->support.rows() ||
                dk->support.cols() != first->support.cols() || dk->support != first->support)
                return false;
        }
    }
    return true;
}

}  // namespace detail

/// Collapse a normalized mixture of Bernoulli components into one.
/// Existence pools linearly. Particle or discrete densities over a shared
/// support pool their weights exactly; disjoint particle clouds concatenate
/// (also exact); anything else is moment-matched to a Gaussian.
/// Occludability is existence-averaged.
inline BernoulliComponent pool_merge(const ComponentMixture& mixture) {
    BernoulliComponent out;
    if (mixture.empty()) return out;
    double pooled_r = 0.0, occ_num = 0.0;
    bool any_occ = false;
    for (const auto& wc : mixture) {
        pooled_r += wc.weight * wc.component.existence;
        occ_num += wc.weight * wc.component.existence * wc.component.occ_or();
        any_occ = any_occ || wc.component.occludability.has_value();
    }
    out.existence = pooled_r;

    // Mixture moments under existence weighting; plain weights when no
    // existence mass remains.
    std::vector<double> mix(mixture.size());
    double total = 0.0;
    for (std::size_t k = 0; k < mixture.size(); ++k) {
        mix[k] = pooled_r > 0.0 ? mixture[k].weight * mixture[k].component.existence
                                : mixture[k].weight;
        total += mix[k];
    }
    for (auto& m : mix) m /= total;
    if (any_occ)
        out.occludability =
            pooled_r > 0.0 ? occ_num / pooled_r : mixture.front().component.occ_or();

    if (detail::shared_support<ParticleDensity>(mixture)) {
        ParticleDensity merged = std::get<ParticleDensity>(mixture.front().component.density);
        merged.weights = mix[0] * merged.weights;
        for (std::size_t k = 1; k < mixture.size(); ++k)
            merged.weights +=
                mix[k] * std::get<ParticleDensity>(mixture[k].component.density).weights;
        out.density = std::move(merged);
        return out;
    }
    if (detail::shared_support<DiscreteDensity>(mixture)) {
        DiscreteDensity merged = std::get<DiscreteDensity>(mixture.front().component.density);
        merged.masses = mix[0] * merged.masses;
        for (std::size_t k = 1; k < mixture.size(); ++k)
            merged.masses +=
                mix[k] * std::get<DiscreteDensity>(mixture[k].component.density).masses;
        out.density = std::move(merged);
        return out;
    }

    bool all_particles = true;
    Eigen::Index rows = -1, count = 0;
    for (const auto& wc : mixture) {
        const auto* p = std::get_if<ParticleDensity>(&wc.component.density);
        if (!p || (rows >= 0 && p->points.rows() != rows)) {
            all_particles = false;
            break;
        }
        rows = p->points.rows();
        count += p->weights.size();
    }
    if (all_particles) {
        ParticleDensity merged;
        merged.points.resize(rows, count);
        merged.weights.resize(count);
        Eigen::Index at = 0;
        for (std::size_t k = 0; k < mixture.size(); ++k) {
            const auto& p = std::get<ParticleDensity>(mixture[k].component.density);
            merged.points.middleCols(at, p.weights.size()) = p.points;
            merged.weights.segment(at, p.weights.size()) = mix[k] * p.weights;
            at += p.weights.size();
        }
        out.density = std::move(merged);
        return out;
    }

    const Eigen::Index d = density_dim(mixture.front().component.density);
    VecX mean = VecX::Zero(d);
    std::vector<GaussianDensity> moments(mixture.size());
    for (std::size_t k = 0; k < mixture.size(); ++k) {
        moments[k] = moments_of(mixture[k].component.density);
        mean += mix[k] * moments[k].mean;
    }
    MatX cov = MatX::Zero(d, d);
    for (std::size_t k = 0; k < mixture.size(); ++k) {
        const VecX dx = moments[k].mean - mean;
        cov += mix[k] * (moments[k].cov + dx * dx.transpose());
    }
    symmetrize(cov);
    out.density = GaussianDensity{mean, cov};
    return out;
}

inline StateDensity Track::merged_density() const {
    if (components.size() == 1) return components.front().component.density;
    return pool_merge(components).density;
}

}  // namespace occtrack
