#pragma once

#include "occtrack/components.hpp"
#include "occtrack/density.hpp"
#include "occtrack/occlusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace occtrack {

/// One scan's association weights plus the cached conditional posteriors the
/// weights were computed from. Rows are tracks, columns measurements.
struct AssociationProblem {
    MatX detect_weights;    // W(i,j) = r_i · ∫ p_i(x) P_D_eff(x) p(z_j|x) dx
    VecX miss_weights;      // λ0_i = 1 − r_i + r_i ∫ p_i(x) miss_eff(x) dx
    VecX clutter_weights;   // κ·p_F(z_j), plus undetected-origin mass when built from a PMB

    std::vector<std::vector<ComponentMixture>> detect_posteriors;  // empty on zero support
    std::vector<ComponentMixture> miss_posteriors;

    /// Association-independent evidence terms: −κ, the undetected no-detection
    /// exponent, the occluded-clutter exponent.
    double log_evidence_offset = 0.0;

    /// Undetected-intensity bookkeeping, filled by the PMB overload.
    double undetected_miss_scale = 1.0;
    std::optional<StateDensity> undetected_miss_shape;
    VecX spawn_fraction;  // per measurement: undetected share of clutter_weights
    std::vector<std::optional<BernoulliComponent>> spawn_posteriors;

    Eigen::Index num_tracks() const { return miss_weights.size(); }
    Eigen::Index num_meas() const { return clutter_weights.size(); }
};

struct AssociationMarginals {
    MatX P;         // P(track i generated measurement j)
    VecX P_miss;    // P(track i went undetected)
    VecX P_clutter; // P(measurement j is clutter or a new object)
    double log_evidence = 0.0;
    bool converged = true;
};

namespace detail {

struct TrackVisibility {
    std::optional<double> const_vis;               // expected-value strategies
    std::function<double(const VecX&)> vis_fn;     // static / grid strategies
    bool trivial() const { return !const_vis && !vis_fn; }
};

/// Occludability-gated detection factor: a non-occludable measurement is seen
/// whenever the sensor fires, an occludable one only if its source is visible.
inline double gate(double occ, double vis) { return (1.0 - occ) + occ * vis; }

template <class M>
struct DetectOutcome {
    double mass = 0.0;
    StateDensity posterior;
};

/// ∫ p(x)·P_D_eff(x)·p(z|x) dx and the matching posterior; nullopt when the
/// weight annihilates the prior.
template <class M>
std::optional<DetectOutcome<M>> detect_conditional(const StateDensity& density, double occ,
                                                   const TrackVisibility& vis,
                                                   const MeasurementModel<M>& model, const M& z) {
    StateWeight w{PointwiseWeight{}};
    if (vis.const_vis.has_value() || vis.trivial()) {
        const double u = vis.trivial() ? 1.0 : gate(occ, *vis.const_vis);
        if (model.constant_detection) {
            const double scale = *model.constant_detection * u;
            bool conjugate = false;
            if constexpr (std::is_same_v<M, VecX>) {
                if (model.linear_obs && std::holds_alternative<GaussianDensity>(density)) {
                    w = GaussianWeight{model.linear_obs->H, model.linear_obs->R, z, scale};
                    conjugate = true;
                }
            }
            if (!conjugate)
                w = PointwiseWeight{[&model, &z, scale](const VecX& x) {
                    return scale * model.likelihood(x, z);
                }};
        } else {
            w = PointwiseWeight{[&model, &z, u](const VecX& x) {
                return (model.detect_prob(x) * u) * model.likelihood(x, z);
            }};
        }
    } else {
        if constexpr (std::is_same_v<M, VecX>) {
            if (model.constant_detection && model.linear_obs &&
                std::holds_alternative<GaussianDensity>(density)) {
                // Conjugate mass first; the visibility modulation is nearly
                // constant over the narrow detect posterior, so it enters as a
                // scale at the posterior mean instead of through quadrature.
                try {
                    StateWeight gw{GaussianWeight{model.linear_obs->H, model.linear_obs->R, z,
                                                  *model.constant_detection}};
                    auto upd = density_update(density, gw);
                    const double v = gate(occ, vis.vis_fn(density_mean(upd.posterior)));
                    if (!(upd.mass * v > 0.0)) return std::nullopt;
                    return DetectOutcome<M>{upd.mass * v, std::move(upd.posterior)};
                } catch (const ZeroSupportError&) {
                    return std::nullopt;
                }
            }
        }
        w = PointwiseWeight{[&model, &z, occ, &vis](const VecX& x) {
            return (model.detect_prob(x) * gate(occ, vis.vis_fn(x))) * model.likelihood(x, z);
        }};
    }
    try {
        auto upd = density_update(density, w);
        return DetectOutcome<M>{upd.mass, std::move(upd.posterior)};
    } catch (const ZeroSupportError&) {
        return std::nullopt;
    }
}

struct MissOutcome {
    double lambda0 = 1.0;       // 1 − r + r·m_tot
    double miss_integral = 1.0; // m_tot
    StateDensity density;
    bool density_valid = true;
    std::optional<double> occ_posterior;
};

/// Missed-detection mass, posterior density, and the occludability bump
/// occ′ = occ·(miss given occludable)/(miss overall).
template <class M>
MissOutcome miss_conditional(const BernoulliComponent& comp, const TrackVisibility& vis,
                             const MeasurementModel<M>& model,
                             const MeasurementWise<M>* mwo, const std::vector<M>& Z) {
    MissOutcome out;
    const double occ = comp.occ_or(1.0);
    const bool update_occ = comp.occludability.has_value();

    if (mwo) {
        const auto miss_fn = mwo_augmented_miss(comp, model, Z, *mwo);
        const auto mm = miss_mass(comp, miss_fn);
        out.lambda0 = mm.lambda0;
        out.miss_integral = mm.miss_integral;
        out.density = mm.miss_density;
        out.density_valid = mm.density_valid;
        if (update_occ && mm.miss_integral > 0.0) {
            BernoulliComponent occludable = comp;
            occludable.occludability = 1.0;
            const auto occ_fn = mwo_augmented_miss(occludable, model, Z, *mwo);
            const auto mo = miss_mass(comp, occ_fn);
            out.occ_posterior = clamp01(occ * mo.miss_integral / mm.miss_integral);
        } else if (update_occ) {
            out.occ_posterior = occ;
        }
        return out;
    }

    if ((vis.const_vis.has_value() || vis.trivial()) && model.constant_detection) {
        // Constant weight: the conditional density is the prior, untouched.
        const double v = vis.trivial() ? 1.0 : *vis.const_vis;
        const double m_tot = 1.0 - *model.constant_detection * gate(occ, v);
        out.miss_integral = m_tot;
        out.lambda0 = 1.0 - comp.existence + comp.existence * m_tot;
        out.density = comp.density;
        out.density_valid = m_tot > 0.0;
        if (update_occ) {
            const double m_occ = 1.0 - *model.constant_detection * v;
            out.occ_posterior = m_tot > 0.0 ? clamp01(occ * m_occ / m_tot) : occ;
        }
        return out;
    }

    const auto vis_at = [&vis](const VecX& x) {
        return vis.trivial() ? 1.0 : (vis.const_vis ? *vis.const_vis : vis.vis_fn(x));
    };
    const auto mm = miss_mass(comp, [&](const VecX& x) {
        return 1.0 - model.detect_prob(x) * gate(occ, vis_at(x));
    });
    out.lambda0 = mm.lambda0;
    out.miss_integral = mm.miss_integral;
    out.density = mm.miss_density;
    out.density_valid = mm.density_valid;
    if (update_occ) {
        if (mm.miss_integral > 0.0) {
            const auto mo = miss_mass(comp, [&](const VecX& x) {
                return 1.0 - model.detect_prob(x) * vis_at(x);
            });
            out.occ_posterior = clamp01(occ * mo.miss_integral / mm.miss_integral);
        } else {
            out.occ_posterior = occ;
        }
    }
    return out;
}

/// Existence-weighted mean and total existence of a track mixture, for the
/// expected-value occluder digest.
inline OccluderSummary track_summary(const ComponentMixture& mixture) {
    OccluderSummary s;
    for (const auto& wc : mixture) s.existence += wc.weight * wc.component.existence;
    VecX mean;
    double total = 0.0;
    for (const auto& wc : mixture) {
        const double w =
            s.existence > 0.0 ? wc.weight * wc.component.existence : wc.weight;
        const VecX mu = density_mean(wc.component.density);
        if (mean.size() == 0) mean = VecX::Zero(mu.size());
        mean += w * mu;
        total += w;
    }
    s.mean = total > 0.0 ? VecX(mean / total) : mean;
    return s;
}

template <class M>
AssociationProblem build_problem_impl(const std::vector<ComponentMixture>& tracks,
                                      const PoissonIntensity* undetected,
                                      const std::vector<M>& Z,
                                      const MeasurementModel<M>& model,
                                      const OcclusionStrategy<M>& strategy) {
    const Eigen::Index n = static_cast<Eigen::Index>(tracks.size());
    const Eigen::Index m = static_cast<Eigen::Index>(Z.size());

    const auto* mwo = std::get_if<MeasurementWise<M>>(&strategy);
    if (mwo) {
        // A received measurement hidden behind the others is a contradiction:
        // the whole outcome has probability zero.
        for (std::size_t j = 0; j < Z.size(); ++j) {
            std::vector<M> others;
            others.reserve(Z.size() - 1);
            for (std::size_t j2 = 0; j2 < Z.size(); ++j2)
                if (j2 != j) others.push_back(Z[j2]);
            if (mwo->meas_visibility(Z[j], others) <= 0.0)
                throw ImpossibleOutcomeError(
                    "build_problem: a visible measurement has zero visibility given the others");
        }
    }

    // Per-track visibility digest. Expected-value strategies reduce each track
    // to a scalar; static and grid strategies share one state function.
    std::vector<TrackVisibility> track_vis(tracks.size());
    std::function<double(const VecX&)> state_vis;  // for the undetected intensity
    if (const auto* st = std::get_if<ObjectWiseStatic>(&strategy)) {
        state_vis = st->visibility;
        for (auto& tv : track_vis) tv.vis_fn = st->visibility;
    } else if (const auto* gr = std::get_if<ObjectWiseGrid>(&strategy)) {
        state_vis = [gr](const VecX& x) { return gr->visibility(x); };
        for (auto& tv : track_vis) tv.vis_fn = state_vis;
    } else if (const auto* ev = std::get_if<ObjectWiseExpval>(&strategy)) {
        std::vector<OccluderSummary> summaries(tracks.size());
        for (std::size_t i = 0; i < tracks.size(); ++i) summaries[i] = track_summary(tracks[i]);
        for (std::size_t i = 0; i < tracks.size(); ++i) {
            std::vector<OccluderSummary> others;
            others.reserve(tracks.size() - 1);
            for (std::size_t i2 = 0; i2 < tracks.size(); ++i2)
                if (i2 != i) others.push_back(summaries[i2]);
            track_vis[i].const_vis =
                1.0 - expval_occlusion(summaries[i].mean, others, ev->kernel, ev->beta,
                                       ev->combiner);
        }
        state_vis = [ev, summaries](const VecX& x) {
            return 1.0 - expval_occlusion(x, summaries, ev->kernel, ev->beta, ev->combiner);
        };
    }

    AssociationProblem problem;
    problem.detect_weights = MatX::Zero(n, m);
    problem.miss_weights = VecX::Zero(n);
    problem.clutter_weights = VecX::Zero(m);
    problem.detect_posteriors.assign(tracks.size(), std::vector<ComponentMixture>(Z.size()));
    problem.miss_posteriors.resize(tracks.size());
    problem.spawn_fraction = VecX::Zero(m);
    problem.spawn_posteriors.assign(Z.size(), std::nullopt);
    problem.log_evidence_offset = -model.clutter_rate;
    if (mwo)
        problem.log_evidence_offset +=
            occluded_clutter_exponent(model, Z, mwo->meas_visibility);

    for (std::size_t i = 0; i < tracks.size(); ++i) {
        const ComponentMixture& mixture = tracks[i];
        double lambda0 = 0.0;
        ComponentMixture miss_mixture;
        for (const auto& [beta, comp] : mixture) {
            const auto miss = miss_conditional(comp, track_vis[i], model, mwo, Z);
            lambda0 += beta * miss.lambda0;
            if (miss.lambda0 > 0.0 && miss.density_valid) {
                BernoulliComponent post;
                post.existence = comp.existence * miss.miss_integral / miss.lambda0;
                post.density = miss.density;
                post.occludability = miss.occ_posterior;
                miss_mixture.push_back({beta * miss.lambda0, post});
            }
        }
        double norm = 0.0;
        for (const auto& wc : miss_mixture) norm += wc.weight;
        for (auto& wc : miss_mixture) wc.weight /= norm > 0.0 ? norm : 1.0;
        problem.miss_weights(static_cast<Eigen::Index>(i)) = lambda0;
        problem.miss_posteriors[i] = std::move(miss_mixture);

        for (std::size_t j = 0; j < Z.size(); ++j) {
            double w_ij = 0.0;
            ComponentMixture detect_mixture;
            for (const auto& [beta, comp] : mixture) {
                if (comp.existence <= 0.0) continue;
                const auto det = detect_conditional(comp.density, comp.occ_or(1.0),
                                                    track_vis[i], model, Z[j]);
                if (!det) continue;
                const double w = beta * comp.existence * det->mass;
                if (w <= 0.0) continue;
                BernoulliComponent post;
                post.existence = 1.0;
                post.density = det->posterior;
                post.occludability = comp.occludability;
                detect_mixture.push_back({w, post});
                w_ij += w;
            }
            for (auto& wc : detect_mixture) wc.weight /= w_ij;
            problem.detect_weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                w_ij;
            problem.detect_posteriors[i][j] = std::move(detect_mixture);
        }
    }

    for (std::size_t j = 0; j < Z.size(); ++j)
        problem.clutter_weights(static_cast<Eigen::Index>(j)) =
            model.clutter_rate * model.clutter_density(Z[j]);

    if (undetected) {
        BernoulliComponent pseudo{1.0, undetected->shape, std::nullopt};
        TrackVisibility ppp_vis;
        if (state_vis) ppp_vis.vis_fn = state_vis;
        const auto miss = miss_conditional(pseudo, ppp_vis, model, mwo, Z);
        problem.undetected_miss_scale = miss.miss_integral;
        if (miss.density_valid) problem.undetected_miss_shape = miss.density;
        problem.log_evidence_offset -= undetected->rate * (1.0 - miss.miss_integral);

        for (std::size_t j = 0; j < Z.size(); ++j) {
            const auto det =
                detect_conditional(undetected->shape, 1.0, ppp_vis, model, Z[j]);
            if (!det) continue;
            const double u_j = undetected->rate * det->mass;
            if (u_j <= 0.0) continue;
            const Eigen::Index jj = static_cast<Eigen::Index>(j);
            problem.clutter_weights(jj) += u_j;
            problem.spawn_fraction(jj) = u_j / problem.clutter_weights(jj);
            problem.spawn_posteriors[j] = BernoulliComponent{0.0, det->posterior, std::nullopt};
        }
    }
    return problem;
}

}  // namespace detail

/// Association weights for an unlabeled multi-Bernoulli prior.
template <class M>
AssociationProblem build_problem(const MultiBernoulli& prior, const std::vector<M>& Z,
                                 const MeasurementModel<M>& model,
                                 const OcclusionStrategy<M>& strategy) {
    std::vector<ComponentMixture> tracks;
    tracks.reserve(prior.components.size());
    for (const auto& comp : prior.components) tracks.push_back({{1.0, comp}});
    return detail::build_problem_impl(tracks, nullptr, Z, model, strategy);
}

/// Association weights for a labeled PMB prior; also thins the undetected
/// intensity and prepares spawn candidates for each measurement.
template <class M>
AssociationProblem build_problem(const PMBState& prior, const std::vector<M>& Z,
                                 const MeasurementModel<M>& model,
                                 const OcclusionStrategy<M>& strategy) {
    std::vector<ComponentMixture> tracks;
    tracks.reserve(prior.tracks.size());
    for (const auto& t : prior.tracks) tracks.push_back(t.components);
    return detail::build_problem_impl(tracks, &prior.undetected, Z, model, strategy);
}

namespace detail {

/// In-place row/column max-normalization. Scaling a row {λ_i, W(i,·)} or a
/// column {c_j, W(·,j)} multiplies every association's weight product by the
/// same constant, so marginals are untouched; the log of the scales feeds
/// back into the evidence.
inline double condition_weights(MatX& W, VecX& lam, VecX& c) {
    double log_scale = 0.0;
    for (Eigen::Index j = 0; j < c.size(); ++j) {
        const double s = std::max(c(j), W.rows() > 0 ? W.col(j).maxCoeff() : 0.0);
        if (s <= 0.0)
            throw ZeroSupportError("association: a measurement has no positive-weight origin");
        W.col(j) /= s;
        c(j) /= s;
        log_scale += std::log(s);
    }
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
        const double t = std::max(lam(i), c.size() > 0 ? W.row(i).maxCoeff() : 0.0);
        if (t <= 0.0)
            throw ZeroSupportError("association: a track has no feasible association");
        W.row(i) /= t;
        lam(i) /= t;
        log_scale += std::log(t);
    }
    return log_scale;
}

}  // namespace detail

constexpr Eigen::Index kEnumerationGuard = 10;

/// Exhaustive association marginals via dynamic programming over track
/// subsets: every measurement maps to one track or clutter, every track to at
/// most one measurement. O(m²·2ⁿ·n); refused beyond 10×10.
inline AssociationMarginals exact_marginals(const AssociationProblem& problem) {
    const Eigen::Index n = problem.num_tracks();
    const Eigen::Index m = problem.num_meas();
    if (n > kEnumerationGuard || m > kEnumerationGuard)
        throw EnumerationGuardError("exact_marginals: problem too large, use lbp_marginals");

    MatX W = problem.detect_weights;
    VecX lam = problem.miss_weights;
    VecX c = problem.clutter_weights;
    const double log_scale = detail::condition_weights(W, lam, c);

    const std::uint32_t full = 1u << n;
    VecX Lambda(full);  // Π of λ over tracks outside the subset
    for (std::uint32_t S = 0; S < full; ++S) {
        double prod = 1.0;
        for (Eigen::Index i = 0; i < n; ++i)
            if (!(S & (1u << i))) prod *= lam(i);
        Lambda(S) = prod;
    }

    // dp(skip) sums, per used-track subset, the weight of all assignments of
    // the measurements other than `skip`.
    const auto dp = [&](Eigen::Index skip) {
        std::vector<double> g(full, 0.0), next(full, 0.0);
        g[0] = 1.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            if (j == skip) continue;
            std::fill(next.begin(), next.end(), 0.0);
            for (std::uint32_t S = 0; S < full; ++S) {
                if (g[S] == 0.0) continue;
                next[S] += g[S] * c(j);
                for (Eigen::Index i = 0; i < n; ++i) {
                    const std::uint32_t bit = 1u << i;
                    if (!(S & bit)) next[S | bit] += g[S] * W(i, j);
                }
            }
            g.swap(next);
        }
        return g;
    };

    const std::vector<double> g_all = dp(-1);
    double evidence = 0.0;
    for (std::uint32_t S = 0; S < full; ++S) evidence += g_all[S] * Lambda(S);
    if (evidence <= 0.0)
        throw ZeroSupportError("exact_marginals: no association has positive weight");

    AssociationMarginals out;
    out.P = MatX::Zero(n, m);
    out.P_miss = VecX::Zero(n);
    out.P_clutter = VecX::Zero(m);
    out.log_evidence = std::log(evidence) + log_scale + problem.log_evidence_offset;

    for (Eigen::Index i = 0; i < n; ++i) {
        double mass = 0.0;
        for (std::uint32_t S = 0; S < full; ++S)
            if (!(S & (1u << i))) mass += g_all[S] * Lambda(S);
        out.P_miss(i) = mass / evidence;
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        const std::vector<double> h = dp(j);
        double clutter = 0.0;
        for (std::uint32_t S = 0; S < full; ++S) clutter += h[S] * Lambda(S);
        out.P_clutter(j) = c(j) * clutter / evidence;
        for (Eigen::Index i = 0; i < n; ++i) {
            const std::uint32_t bit = 1u << i;
            double mass = 0.0;
            for (std::uint32_t S = 0; S < full; ++S)
                if (!(S & bit)) mass += h[S] * Lambda(S | bit);
            out.P(i, j) = W(i, j) * mass / evidence;
        }
    }
    return out;
}

/// Loopy belief propagation on the track/measurement bipartite graph with
/// damped parallel updates. Exact on trees; approximate otherwise, with the
/// Bethe estimate reported as log_evidence.
inline AssociationMarginals lbp_marginals(const AssociationProblem& problem, double tol = 1e-6,
                                          int max_iter = 200) {
    const Eigen::Index n = problem.num_tracks();
    const Eigen::Index m = problem.num_meas();
    MatX W = problem.detect_weights;
    VecX lam = problem.miss_weights;
    VecX c = problem.clutter_weights;
    const double log_scale = detail::condition_weights(W, lam, c);

    constexpr double kDamping = 0.5;
    constexpr double kMessageCap = 1e100;
    constexpr double kDenomFloor = 1e-300;

    MatX mu = MatX::Zero(n, m);   // track i → measurement j
    MatX nu = MatX::Ones(n, m);   // measurement j → track i
    bool converged = (n == 0) || (m == 0);
    for (int iter = 0; iter < max_iter && !converged; ++iter) {
        double delta = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double row = lam(i) + W.row(i).cwiseProduct(nu.row(i)).sum();
            for (Eigen::Index j = 0; j < m; ++j) {
                const double denom = std::max(row - W(i, j) * nu(i, j), kDenomFloor);
                const double fresh = std::min(W(i, j) / denom, kMessageCap);
                const double next = iter == 0 ? fresh : (1.0 - kDamping) * mu(i, j) + kDamping * fresh;
                delta = std::max(delta, std::abs(next - mu(i, j)));
                mu(i, j) = next;
            }
        }
        for (Eigen::Index j = 0; j < m; ++j) {
            const double col = c(j) + mu.col(j).sum();
            for (Eigen::Index i = 0; i < n; ++i) {
                const double denom = std::max(col - mu(i, j), kDenomFloor);
                const double fresh = std::min(1.0 / denom, kMessageCap);
                const double next = iter == 0 ? fresh : (1.0 - kDamping) * nu(i, j) + kDamping * fresh;
                delta = std::max(delta, std::abs(next - nu(i, j)));
                nu(i, j) = next;
            }
        }
        converged = delta < tol;
    }

    AssociationMarginals out;
    out.converged = converged;
    out.P = MatX::Zero(n, m);
    out.P_miss = VecX::Zero(n);
    out.P_clutter = VecX::Zero(m);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double denom = lam(i) + W.row(i).cwiseProduct(nu.row(i)).sum();
        for (Eigen::Index j = 0; j < m; ++j) out.P(i, j) = W(i, j) * nu(i, j) / denom;
        out.P_miss(i) = lam(i) / denom;
    }
    for (Eigen::Index j = 0; j < m; ++j)
        out.P_clutter(j) = std::max(0.0, 1.0 - out.P.col(j).sum());

    // Bethe free energy: node normalizers minus pairwise corrections.
    double bethe = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
        bethe += std::log(lam(i) + W.row(i).cwiseProduct(nu.row(i)).sum());
    for (Eigen::Index j = 0; j < m; ++j) bethe += std::log(c(j) + mu.col(j).sum());
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < m; ++j) bethe -= std::log1p(mu(i, j) * nu(i, j));
    out.log_evidence = bethe + log_scale + problem.log_evidence_offset;
    return out;
}

/// Marginal-weighted track-merged posterior: each track becomes the mixture
/// of its conditional posteriors, the undetected intensity is thinned, and
/// measurements with enough undetected-origin mass spawn fresh tracks.
///
/// existence_cap below one bounds detect-conditioned and spawned existence,
/// so no run of detections can make a track certain and hence immune to
/// missed-detection decay; priors already at one pass through the miss branch
/// untouched.
inline PMBState pmb_posterior(const PMBState& prior, const AssociationMarginals& marginals,
                              const AssociationProblem& problem, double spawn_threshold = 0.05,
                              double existence_cap = 1.0) {
    PMBState post;
    post.next_label = prior.next_label;
    post.undetected = prior.undetected;
    post.undetected.rate *= problem.undetected_miss_scale;
    if (problem.undetected_miss_shape) post.undetected.shape = *problem.undetected_miss_shape;

    for (std::size_t i = 0; i < prior.tracks.size(); ++i) {
        const Eigen::Index ii = static_cast<Eigen::Index>(i);
        Track track;
        track.label = prior.tracks[i].label;
        if (marginals.P_miss(ii) > 0.0)
            for (const auto& wc : problem.miss_posteriors[i])
                track.components.push_back({marginals.P_miss(ii) * wc.weight, wc.component});
        for (std::size_t j = 0; j < problem.detect_posteriors[i].size(); ++j) {
            const double pij = marginals.P(ii, static_cast<Eigen::Index>(j));
            if (pij <= 0.0) continue;
            for (const auto& wc : problem.detect_posteriors[i][j]) {
                BernoulliComponent comp = wc.component;
                comp.existence = std::min(comp.existence, existence_cap);
                track.components.push_back({pij * wc.weight, std::move(comp)});
            }
        }
        if (track.components.empty()) {
            // Every hypothesis had zero support; keep the prior shape, dead.
            track.components = prior.tracks[i].components;
            for (auto& wc : track.components) wc.component.existence = 0.0;
        }
        double norm = 0.0;
        for (const auto& wc : track.components) norm += wc.weight;
        for (auto& wc : track.components) wc.weight /= norm;
        post.tracks.push_back(std::move(track));
    }

    for (std::size_t j = 0; j < problem.spawn_posteriors.size(); ++j) {
        if (!problem.spawn_posteriors[j]) continue;
        const Eigen::Index jj = static_cast<Eigen::Index>(j);
        const double existence = marginals.P_clutter(jj) * problem.spawn_fraction(jj);
        if (existence <= spawn_threshold) continue;
        Track track;
        track.label = post.next_label++;
        BernoulliComponent comp = *problem.spawn_posteriors[j];
        comp.existence = std::min(existence, existence_cap);
        track.components.push_back({1.0, std::move(comp)});
        post.tracks.push_back(std::move(track));
    }
    return post;
}

}  // namespace occtrack
