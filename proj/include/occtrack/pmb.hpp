#pragma once

#include "occtrack/association.hpp"
#include "occtrack/components.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <utility>
#include <vector>

namespace occtrack {

/// Occludability relaxes toward its long-run value a little every frame.
struct OccludabilityMixing {
    double equilibrium = 0.95;
    double rate = 0.1;
};

struct LinearGaussianMotion {
    MatX F;
    MatX Q;
};

/// Per-step dynamics: a linear-Gaussian pair for closed-form prediction, or a
/// per-point sampler for particle clouds.
struct MotionModel {
    std::optional<LinearGaussianMotion> linear;
    std::function<VecX(Rng&, const VecX&)> particle_step;
    double survival = 1.0;
    OccludabilityMixing occludability_mixing;
};

namespace detail {

inline StateDensity predict_density(const StateDensity& density, const MotionModel& motion,
                                    Rng& rng) {
    if (const auto* g = std::get_if<GaussianDensity>(&density)) {
        if (!motion.linear)
            throw DegenerateModelError("predict_density: Gaussian state needs linear motion");
        GaussianDensity out;
        out.mean = motion.linear->F * g->mean;
        out.cov = motion.linear->F * g->cov * motion.linear->F.transpose() + motion.linear->Q;
        symmetrize(out.cov);
        return out;
    }
    if (const auto* p = std::get_if<ParticleDensity>(&density)) {
        if (!motion.particle_step)
            throw DegenerateModelError("predict_density: particle state needs a particle step");
        ParticleDensity out = *p;
        for (Eigen::Index k = 0; k < out.points.cols(); ++k)
            out.points.col(k) = motion.particle_step(rng, out.points.col(k));
        return out;
    }
    throw DegenerateModelError("predict_density: no prediction rule for this representation");
}

/// Combine two Poisson intensities. Particle clouds concatenate exactly;
/// anything else is moment-matched through pool_merge.
inline PoissonIntensity merge_intensity(const PoissonIntensity& a, const PoissonIntensity& b) {
    if (b.rate <= 0.0) return a;
    if (a.rate <= 0.0) return b;
    PoissonIntensity out;
    out.rate = a.rate + b.rate;
    const auto* pa = std::get_if<ParticleDensity>(&a.shape);
    const auto* pb = std::get_if<ParticleDensity>(&b.shape);
    if (pa && pb && pa->points.rows() == pb->points.rows()) {
        ParticleDensity merged;
        merged.points.resize(pa->points.rows(), pa->points.cols() + pb->points.cols());
        merged.points << pa->points, pb->points;
        merged.weights.resize(pa->weights.size() + pb->weights.size());
        merged.weights << (a.rate / out.rate) * pa->weights, (b.rate / out.rate) * pb->weights;
        out.shape = std::move(merged);
        return out;
    }
    const ComponentMixture mixture{{a.rate / out.rate, BernoulliComponent{1.0, a.shape, {}}},
                                   {b.rate / out.rate, BernoulliComponent{1.0, b.shape, {}}}};
    out.shape = pool_merge(mixture).density;
    return out;
}

}  // namespace detail

/// One prediction step: densities through the motion model, existence thinned
/// by survival, occludability mixed toward equilibrium, and the undetected
/// intensity carried forward plus births.
inline PMBState pmb_predict(const PMBState& state, const MotionModel& motion, Rng& rng,
                            const std::optional<PoissonIntensity>& birth = std::nullopt) {
    PMBState out;
    out.next_label = state.next_label;

    const double beta = motion.occludability_mixing.rate;
    const double equilibrium = motion.occludability_mixing.equilibrium;

    out.tracks.reserve(state.tracks.size());
    for (const Track& track : state.tracks) {
        Track predicted;
        predicted.label = track.label;
        predicted.components.reserve(track.components.size());
        for (const auto& wc : track.components) {
            BernoulliComponent comp;
            comp.existence = motion.survival * wc.component.existence;
            comp.density = detail::predict_density(wc.component.density, motion, rng);
            if (beta > 0.0)
                comp.occludability = (1.0 - beta) * wc.component.occ_or() + beta * equilibrium;
            else
                comp.occludability = wc.component.occludability;
            predicted.components.push_back({wc.weight, std::move(comp)});
        }
        out.tracks.push_back(std::move(predicted));
    }

    PoissonIntensity undetected;
    undetected.rate = motion.survival * state.undetected.rate;
    if (undetected.rate > 0.0)
        undetected.shape = detail::predict_density(state.undetected.shape, motion, rng);
    else
        undetected.shape = state.undetected.shape;
    out.undetected = birth ? detail::merge_intensity(undetected, *birth) : undetected;
    return out;
}

struct UpdateOptions {
    double lbp_tol = 1e-6;
    int lbp_max_iter = 200;
    double spawn_threshold = 0.05;
    bool exact_when_small = true;
    /// Ceiling on detect-conditioned and spawned existence. Below one it keeps
    /// long-confirmed tracks killable by sustained misses; at one the update
    /// is exact Bayes.
    double existence_cap = 1.0;
};

/// One measurement update: association problem, marginals (exact when the
/// problem is small enough to enumerate, loopy BP otherwise), posterior
/// assembly.
template <class M>
PMBState pmb_update(const PMBState& state, const std::vector<M>& Z,
                    const MeasurementModel<M>& model, const OcclusionStrategy<M>& strategy,
                    const UpdateOptions& options = {}) {
    const auto problem = build_problem(state, Z, model, strategy);
    const bool small = problem.num_tracks() <= kEnumerationGuard &&
                       problem.num_meas() <= kEnumerationGuard;
    const AssociationMarginals marginals =
        options.exact_when_small && small
            ? exact_marginals(problem)
            : lbp_marginals(problem, options.lbp_tol, options.lbp_max_iter);
    return pmb_posterior(state, marginals, problem, options.spawn_threshold,
                         options.existence_cap);
}

namespace detail {

/// Minimal kd-tree over column points for fixed-radius neighbour queries.
class KdTree {
public:
    explicit KdTree(const MatX& points) : points_(points), nodes_(points.cols()) {
        std::iota(nodes_.begin(), nodes_.end(), 0);
        if (!nodes_.empty()) build(0, static_cast<int>(nodes_.size()), 0);
    }

    std::vector<int> within(const VecX& center, double radius_sq) const {
        std::vector<int> hits;
        if (!nodes_.empty())
            search(0, static_cast<int>(nodes_.size()), 0, center, radius_sq, hits);
        std::sort(hits.begin(), hits.end());
        return hits;
    }

private:
    void build(int lo, int hi, int depth) {
        if (hi - lo <= 1) return;
        const int mid = (lo + hi) / 2;
        const int axis = depth % static_cast<int>(points_.rows());
        std::nth_element(nodes_.begin() + lo, nodes_.begin() + mid, nodes_.begin() + hi,
                         [&](int a, int b) { return points_(axis, a) < points_(axis, b); });
        build(lo, mid, depth + 1);
        build(mid + 1, hi, depth + 1);
    }

    void search(int lo, int hi, int depth, const VecX& center, double radius_sq,
                std::vector<int>& hits) const {
        if (lo >= hi) return;
        const int mid = (lo + hi) / 2;
        const int idx = nodes_[static_cast<std::size_t>(mid)];
        if ((points_.col(idx) - center).squaredNorm() <= radius_sq) hits.push_back(idx);
        if (hi - lo == 1) return;
        const int axis = depth % static_cast<int>(points_.rows());
        const double gap = center(axis) - points_(axis, idx);
        if (gap <= 0.0 || gap * gap <= radius_sq) search(lo, mid, depth + 1, center, radius_sq, hits);
        if (gap >= 0.0 || gap * gap <= radius_sq)
            search(mid + 1, hi, depth + 1, center, radius_sq, hits);
    }

    const MatX& points_;
    std::vector<int> nodes_;
};

/// Merge a track's near-duplicate components: means are whitened by the
/// weight-averaged component covariance, neighbours within the squared radius
/// pool together, heaviest first.
inline void merge_track_components(Track& track, double merge_radius_sq) {
    const std::size_t K = track.components.size();
    if (K <= 1) return;

    const Eigen::Index d = density_dim(track.components.front().component.density);
    MatX means(d, static_cast<Eigen::Index>(K));
    MatX avg_cov = MatX::Zero(d, d);
    for (std::size_t k = 0; k < K; ++k) {
        const GaussianDensity mom = moments_of(track.components[k].component.density);
        means.col(static_cast<Eigen::Index>(k)) = mom.mean;
        avg_cov += track.components[k].weight * mom.cov;
    }
    avg_cov += 1e-12 * MatX::Identity(d, d);
    const Eigen::LLT<MatX> llt(avg_cov);
    MatX whitened = llt.matrixL().solve(means);

    const KdTree tree(whitened);
    std::vector<std::size_t> order(K);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return track.components[a].weight > track.components[b].weight;
    });

    std::vector<bool> taken(K, false);
    ComponentMixture merged;
    for (std::size_t k : order) {
        if (taken[k]) continue;
        ComponentMixture cluster;
        double cluster_weight = 0.0;
        for (int idx : tree.within(whitened.col(static_cast<Eigen::Index>(k)), merge_radius_sq)) {
            const auto u = static_cast<std::size_t>(idx);
            if (taken[u]) continue;
            taken[u] = true;
            cluster.push_back(track.components[u]);
            cluster_weight += track.components[u].weight;
        }
        if (cluster.size() == 1) {
            merged.push_back(std::move(cluster.front()));
            continue;
        }
        for (auto& wc : cluster) wc.weight /= cluster_weight;
        merged.push_back({cluster_weight, pool_merge(cluster)});
    }
    track.components = std::move(merged);
}

}  // namespace detail

/// Bound the state size: merge near-duplicate components, keep the heaviest
/// components and highest-existence tracks, and recycle everything evicted
/// into the undetected intensity so expected cardinality is conserved.
inline PMBState cap_and_recycle(PMBState state, int max_tracks = 72, int max_components = 2048,
                                double recycle_threshold = 0.1, double merge_radius_sq = 0.1) {
    for (Track& track : state.tracks) detail::merge_track_components(track, merge_radius_sq);

    // Global component budget, ranked by unconditional mass.
    int total_components = 0;
    for (const Track& track : state.tracks)
        total_components += static_cast<int>(track.components.size());
    if (total_components > max_components) {
        std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> ranked;
        ranked.reserve(static_cast<std::size_t>(total_components));
        for (std::size_t t = 0; t < state.tracks.size(); ++t) {
            const double r = state.tracks[t].existence();
            for (std::size_t k = 0; k < state.tracks[t].components.size(); ++k)
                ranked.push_back({state.tracks[t].components[k].weight * r, {t, k}});
        }
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        std::vector<std::vector<bool>> keep(state.tracks.size());
        for (std::size_t t = 0; t < state.tracks.size(); ++t)
            keep[t].assign(state.tracks[t].components.size(), false);
        for (int n = 0; n < max_components && n < static_cast<int>(ranked.size()); ++n)
            keep[ranked[static_cast<std::size_t>(n)].second.first]
                [ranked[static_cast<std::size_t>(n)].second.second] = true;
        for (std::size_t t = 0; t < state.tracks.size(); ++t) {
            ComponentMixture kept;
            double norm = 0.0;
            for (std::size_t k = 0; k < state.tracks[t].components.size(); ++k)
                if (keep[t][k]) {
                    kept.push_back(state.tracks[t].components[k]);
                    norm += kept.back().weight;
                }
            for (auto& wc : kept) wc.weight /= norm > 0.0 ? norm : 1.0;
            state.tracks[t].components = std::move(kept);
        }
    }

    // Track budget and floor: evicted tracks become undetected intensity.
    std::vector<std::size_t> order(state.tracks.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return state.tracks[a].existence() > state.tracks[b].existence();
    });
    std::vector<bool> recycle(state.tracks.size(), false);
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        const Track& track = state.tracks[order[rank]];
        if (rank >= static_cast<std::size_t>(max_tracks) ||
            track.existence() < recycle_threshold || track.components.empty())
            recycle[order[rank]] = true;
    }

    PMBState out;
    out.next_label = state.next_label;
    out.undetected = state.undetected;
    for (std::size_t t = 0; t < state.tracks.size(); ++t) {
        if (!recycle[t]) {
            out.tracks.push_back(std::move(state.tracks[t]));
            continue;
        }
        const double r = state.tracks[t].existence();
        if (r <= 0.0 || state.tracks[t].components.empty()) continue;
        out.undetected = detail::merge_intensity(
            out.undetected, PoissonIntensity{r, state.tracks[t].merged_density()});
    }
    return out;
}

}  // namespace occtrack
