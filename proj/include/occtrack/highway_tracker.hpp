#pragma once

#include "occtrack/highway.hpp"
#include "occtrack/occlusion.hpp"
#include "occtrack/pmb.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

namespace occtrack {

/// Occlusion reasoning a tracker applies during its update.
enum class OcclusionMode { None, OwoExpval, OwoGrid, Mwo };

/// Filter-side knobs. Scene geometry and sensor characteristics come from
/// the shared HighwayConfig; these only shape the particle representation
/// and the housekeeping limits.
struct HighwayTrackerConfig {
    int birth_particles_per_lane = 16;
    int max_track_particles = 96;
    int max_undetected_particles = 512;
    double process_noise_back = 0.05;    // regularizing jitter, meters/step
    double process_noise_length = 0.02;  // keeps resampled clouds diverse
    double min_length = 0.5;
    double existence_threshold = 0.5;
    double expval_beta = 4.0;
    int grid_cells = 128;
    int max_tracks = 72;
    int max_components = 2048;
    double recycle_threshold = 0.1;
    double merge_radius_sq = 0.1;
    UpdateOptions update{.existence_cap = 1.0 - 1e-6};
};

/// One reported object: a track's existence-weighted state summary.
struct HighwayEstimate {
    TrackLabel label = 0;
    int lane = 0;
    double back = 0.0;
    double length = 0.0;
    double existence = 0.0;
};

namespace detail {

inline int state_lane(const VecX& x, int lanes) {
    return std::clamp(static_cast<int>(std::lround(x(0))), 0, lanes - 1);
}

}  // namespace detail

/// Tracker-side clutter description: uniform over lanes, a back-position
/// stretch, and segment lengths. The box is widened past the simulator's
/// generative one so that no physically possible reading has zero density
/// under every origin hypothesis.
struct HighwayClutterModel {
    int lanes = 0;
    double back_lo = 0.0;
    double back_hi = 0.0;
    double length_max = 0.0;

    double unit() const { return 1.0 / (lanes * (back_hi - back_lo) * length_max); }

    double density(const SensorReading& z) const {
        if (z.kind != SensorReading::Kind::Partial) {
            const double len = z.front - z.back;
            const bool inside =
                z.back >= back_lo && z.back <= back_hi && len >= 0.0 && len <= length_max;
            return inside ? unit() : 0.0;
        }
        if (z.occluded_end == OccludedEnd::Back) {
            // Observed front; the hidden back lies in the censor interval.
            const double lo = std::max({z.occluded_lo, z.front - length_max, back_lo});
            const double hi = std::min({z.occluded_hi, z.front, back_hi});
            return unit() * std::max(0.0, hi - lo);
        }
        if (z.back < back_lo || z.back > back_hi) return 0.0;
        const double lo = std::max(z.occluded_lo, z.back);
        const double hi = std::min(z.occluded_hi, z.back + length_max);
        return unit() * std::max(0.0, hi - lo);
    }

    /// ∫ p_F(z)·g(z) dz by a midpoint rule over the (lane, back, length) box;
    /// the spatial density is uniform, so this is just the mean of g.
    double integrate(const std::function<double(const SensorReading&)>& g, int back_cells = 48,
                     int length_cells = 6) const {
        double acc = 0.0;
        for (int lane = 0; lane < lanes; ++lane)
            for (int b = 0; b < back_cells; ++b)
                for (int l = 0; l < length_cells; ++l) {
                    SensorReading z;
                    z.kind = SensorReading::Kind::Clutter;
                    z.lane = lane;
                    z.back = back_lo + (b + 0.5) * (back_hi - back_lo) / back_cells;
                    z.front = z.back + (l + 0.5) * length_max / length_cells;
                    acc += g(z);
                }
        return acc / (lanes * back_cells * length_cells);
    }
};

inline HighwayClutterModel highway_clutter_model(const HighwayConfig& scene) {
    HighwayClutterModel clutter;
    clutter.lanes = static_cast<int>(scene.lane_offsets.size());
    const double margin = 6.0 * scene.endpoint_sigma + 1.0;
    clutter.back_lo = std::min(scene.clutter_lo, scene.entry_x) - margin;
    clutter.back_hi = std::max(scene.clutter_hi, scene.exit_x) + margin;
    clutter.length_max = std::max(scene.clutter_length_max, scene.length_max) + margin;
    return clutter;
}

/// Sensor description against (lane, back, length) states.
inline MeasurementModel<SensorReading> highway_measurement_model(const HighwayConfig& scene) {
    const HighwayClutterModel clutter = highway_clutter_model(scene);
    const int lanes = clutter.lanes;
    MeasurementModel<SensorReading> model;
    model.constant_detection = scene.detection_prob;
    model.detection = [pd = scene.detection_prob](const VecX&) { return pd; };
    model.likelihood = [scene, lanes](const VecX& x, const SensorReading& z) {
        if (detail::state_lane(x, lanes) != z.lane) return 0.0;
        return reading_likelihood(z, x(1), x(2), scene);
    };
    model.clutter_rate = scene.clutter_rate;
    model.clutter_density = [clutter](const SensorReading& z) { return clutter.density(z); };
    model.clutter_integrator = [clutter](const std::function<double(const SensorReading&)>& g) {
        return clutter.integrate(g);
    };
    return model;
}

/// Fraction of the target's angular span covered by an occluder in a
/// strictly nearer lane; both judged from (lane, back, length) summaries.
inline PairwiseKernel highway_span_kernel(const HighwayConfig& scene) {
    const int lanes = static_cast<int>(scene.lane_offsets.size());
    return {[scene, lanes](const VecX& target, const VecX& occluder) {
        const int target_lane = detail::state_lane(target, lanes);
        const int occluder_lane = detail::state_lane(occluder, lanes);
        if (occluder_lane >= target_lane) return 0.0;
        const detail::Span t =
            detail::angular_span(scene, target(1), target(1) + std::max(target(2), 0.0),
                                 target_lane);
        const detail::Span o =
            detail::angular_span(scene, occluder(1), occluder(1) + std::max(occluder(2), 0.0),
                                 occluder_lane);
        if (t.width() <= 0.0) return 0.0;
        const double overlap = std::min(t.hi, o.hi) - std::max(t.lo, o.lo);
        return clamp01(std::max(0.0, overlap) / t.width());
    }};
}

/// Restricted measurement-wise occlusion against the current scan: a
/// hypothetical reading is hidden exactly when nearer visible readings cover
/// its angular span.
inline MeasurementWise<SensorReading> highway_mwo_strategy(const HighwayConfig& scene) {
    const int lanes = static_cast<int>(scene.lane_offsets.size());
    MeasurementWise<SensorReading> mwo;
    mwo.meas_visibility = [scene](const SensorReading& z,
                                  const std::vector<SensorReading>& others) {
        return tracker_meas_visibility(z, others, scene);
    };
    mwo.occluded_prob_override = [scene, lanes](const VecX& x,
                                                const std::vector<SensorReading>& others) {
        SensorReading hyp;
        hyp.lane = detail::state_lane(x, lanes);
        hyp.back = x(1);
        hyp.front = x(1) + std::max(x(2), 0.0);
        return 1.0 - tracker_meas_visibility(hyp, others, scene);
    };
    return mwo;
}

/// Sequential PMB filter over highway scans. States are (lane, back, length)
/// particle clouds under per-lane constant-velocity motion; births enter as
/// a Poisson cloud on the upstream edge and departures are deleted at the
/// exit boundary.
struct HighwayTracker {
    HighwayConfig scene;
    HighwayTrackerConfig config;
    OcclusionMode mode = OcclusionMode::Mwo;
    MeasurementModel<SensorReading> model;
    MotionModel motion;
    PMBState state;
    Rng rng;

    HighwayTracker(const HighwayConfig& scene_in, OcclusionMode mode_in,
                   const HighwayTrackerConfig& config_in = {}, std::uint64_t seed = 1)
        : scene(scene_in),
          config(config_in),
          mode(mode_in),
          model(highway_measurement_model(scene_in)),
          rng(seed) {
        const HighwayConfig sc = scene;
        const int lanes = static_cast<int>(sc.lane_speeds.size());
        const double noise_back = config.process_noise_back;
        const double noise_length = config.process_noise_length;
        const double min_length = config.min_length;
        motion.particle_step = [sc, lanes, noise_back, noise_length, min_length](
                                   Rng& r, const VecX& x) -> VecX {
            VecX out = x;
            const std::size_t lane = static_cast<std::size_t>(detail::state_lane(x, lanes));
            out(1) += sc.lane_speeds[lane] * sc.dt + normal_sample(r, 0.0, noise_back);
            out(2) = std::max(min_length, out(2) + normal_sample(r, 0.0, noise_length));
            return out;
        };
        motion.survival = 1.0;
        state.undetected.rate = 0.0;
        state.undetected.shape = ParticleDensity{MatX::Zero(3, 1), VecX::Ones(1)};
    }

    void step(const std::vector<SensorReading>& scan) {
        state = pmb_predict(state, motion, rng, birth_intensity());
        drop_departed();
        state = pmb_update(state, mode == OcclusionMode::Mwo ? sanitize_scan(scan) : scan,
                           model, make_strategy(), config.update);
        state = cap_and_recycle(state, config.max_tracks, config.max_components,
                                config.recycle_threshold, config.merge_radius_sq);
        shrink_clouds();
    }

    std::vector<HighwayEstimate> estimates() const {
        const int lanes = static_cast<int>(scene.lane_offsets.size());
        std::vector<HighwayEstimate> out;
        for (const Track& track : state.tracks) {
            const double existence = track.existence();
            if (existence < config.existence_threshold) continue;
            const VecX mean = density_mean(track.merged_density());
            out.push_back({track.label, detail::state_lane(mean, lanes), mean(1), mean(2),
                           existence});
        }
        return out;
    }

    /// Fresh arrivals: a Poisson cloud on the stretch of road new vehicles
    /// crossed the entry boundary into since the last scan.
    PoissonIntensity birth_intensity() {
        const int lanes = static_cast<int>(scene.lane_offsets.size());
        const int per_lane = config.birth_particles_per_lane;
        PoissonIntensity birth;
        birth.rate = lanes * scene.spawn_rate * scene.dt;
        MatX points(3, lanes * per_lane);
        for (int lane = 0; lane < lanes; ++lane)
            for (int k = 0; k < per_lane; ++k) {
                const Eigen::Index col = lane * per_lane + k;
                points(0, col) = lane;
                points(1, col) =
                    uniform(rng, scene.entry_x,
                            scene.entry_x +
                                scene.lane_speeds[static_cast<std::size_t>(lane)] * scene.dt);
                points(2, col) = uniform(rng, scene.length_min, scene.length_max);
            }
        const Eigen::Index n = points.cols();
        birth.shape = ParticleDensity{points, VecX::Constant(n, 1.0 / static_cast<double>(n))};
        return birth;
    }

    OcclusionStrategy<SensorReading> make_strategy() const {
        switch (mode) {
            case OcclusionMode::None: return NoOcclusion{};
            case OcclusionMode::OwoExpval: {
                ObjectWiseExpval expval;
                expval.kernel = highway_span_kernel(scene);
                expval.beta = config.expval_beta;
                return expval;
            }
            case OcclusionMode::OwoGrid: return grid_strategy();
            case OcclusionMode::Mwo: return highway_mwo_strategy(scene);
        }
        return NoOcclusion{};
    }

    /// One visibility grid per lane over the sensor's angular field, each
    /// thinned by the predicted tracks in strictly nearer lanes. Lane 0 sees
    /// the widest angles, so its bounds contain every other lane's field.
    ObjectWiseGrid grid_strategy() const {
        const int lanes = static_cast<int>(scene.lane_offsets.size());
        const double lo = highway_angle(scene, std::min(scene.entry_x, scene.clutter_lo), 0);
        const double hi = highway_angle(scene, std::max(scene.exit_x, scene.clutter_hi), 0);
        const HighwayConfig sc = scene;
        const SpanFn span = [sc, lanes](const VecX& x) {
            const detail::Span s = detail::angular_span(
                sc, x(1), x(1) + std::max(x(2), 0.0), detail::state_lane(x, lanes));
            return std::pair{s.lo, s.hi};
        };
        ObjectWiseGrid strategy;
        strategy.grids.assign(static_cast<std::size_t>(lanes),
                              uniform_grid(lo, hi, config.grid_cells));
        for (int lane = 1; lane < lanes; ++lane) {
            std::vector<std::pair<StateDensity, double>> occluders;
            for (const Track& track : state.tracks) {
                const StateDensity merged = track.merged_density();
                if (detail::state_lane(density_mean(merged), lanes) < lane)
                    occluders.push_back({merged, track.existence()});
            }
            strategy.grids[static_cast<std::size_t>(lane)] = grid_visibility_update(
                std::move(strategy.grids[static_cast<std::size_t>(lane)]), occluders, span);
        }
        strategy.locate = [sc, lanes](const VecX& x) {
            const int lane = detail::state_lane(x, lanes);
            const detail::Span s =
                detail::angular_span(sc, x(1), x(1) + std::max(x(2), 0.0), lane);
            return std::pair{lane, std::pair{s.lo, s.hi}};
        };
        return strategy;
    }

    /// A reading fully hidden behind the rest of the scan contradicts the
    /// restricted measurement-wise model. Scans produced under that model
    /// never contain one, but scans from another regime can (unclipped
    /// clutter, true-geometry clipping); drop the farthest such reading and
    /// re-check until every survivor is visible.
    std::vector<SensorReading> sanitize_scan(std::vector<SensorReading> scan) const {
        const auto blocked = [&](std::size_t j) {
            std::vector<SensorReading> others;
            others.reserve(scan.size() - 1);
            for (std::size_t k = 0; k < scan.size(); ++k)
                if (k != j) others.push_back(scan[k]);
            return tracker_meas_visibility(scan[j], others, scene) <= 0.0;
        };
        for (;;) {
            std::optional<std::size_t> worst;
            for (std::size_t j = 0; j < scan.size(); ++j) {
                if (!blocked(j)) continue;
                if (!worst || scan[j].lane > scan[*worst].lane ||
                    (scan[j].lane == scan[*worst].lane && scan[j].back > scan[*worst].back))
                    worst = j;
            }
            if (!worst) return scan;
            scan.erase(scan.begin() + static_cast<std::ptrdiff_t>(*worst));
        }
    }

    /// Vehicles leave the field deterministically, so tracks past the exit
    /// boundary are deleted outright rather than recycled.
    void drop_departed() {
        std::erase_if(state.tracks, [&](const Track& track) {
            return density_mean(track.merged_density())(1) > scene.exit_x;
        });
    }

    /// Particle hygiene: cap and de-degenerate every track cloud, drop
    /// undetected mass past the exit, and cap the undetected support.
    void shrink_clouds() {
        for (Track& track : state.tracks)
            for (auto& wc : track.components)
                if (auto* p = std::get_if<ParticleDensity>(&wc.component.density)) {
                    if (p->weights.size() > config.max_track_particles)
                        *p = systematic_resample(*p, rng, config.max_track_particles);
                    else
                        resample_if_degenerate(*p, rng);
                }
        auto* cloud = std::get_if<ParticleDensity>(&state.undetected.shape);
        if (!cloud || state.undetected.rate <= 0.0) return;
        double kept = 0.0;
        for (Eigen::Index k = 0; k < cloud->weights.size(); ++k) {
            if (cloud->points(1, k) > scene.exit_x) cloud->weights(k) = 0.0;
            kept += cloud->weights(k);
        }
        if (kept <= 0.0) {
            state.undetected.rate = 0.0;
            return;
        }
        state.undetected.rate *= kept;  // weights were normalized before the cut
        cloud->weights /= kept;
        if (cloud->weights.size() > config.max_undetected_particles)
            *cloud = systematic_resample(*cloud, rng, config.max_undetected_particles);
    }
};

}  // namespace occtrack
