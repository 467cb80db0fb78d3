#pragma once

#include "occtrack/highway_tracker.hpp"
#include "occtrack/mot_io.hpp"
#include "occtrack/occlusion.hpp"
#include "occtrack/pmb.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace occtrack {

/// Detection-driven tracker over image-plane boxes. States are 6-D Gaussians
/// (cx, cy, w, h, vx, vy) under constant-velocity motion; detections are the
/// first four coordinates. Boxes lower in the image (larger bottom edge) can
/// hide boxes behind them.
struct BoxTrackerConfig {
    double image_width = 1920.0;
    double image_height = 1080.0;
    double box_max_width = 400.0;
    double box_max_height = 600.0;
    double survival = 0.99;
    double detection_prob = 0.9;
    double clutter_rate = 2.0;  // expected false detections per frame
    double birth_rate = 1.0;    // expected new objects per frame
    double meas_sigma = 8.0;    // detector noise on centers and sizes, pixels
    double process_sigma_pos = 1.0;
    double process_sigma_size = 2.0;
    double process_sigma_vel = 2.0;
    double init_speed_sigma = 5.0;
    double overlap_ramp = 0.5;  // coverage fraction treated as fully hidden
    double min_confidence = 0.0;
    double existence_threshold = 0.5;
    int max_tracks = 72;
    int max_components = 512;
    double recycle_threshold = 0.1;
    double merge_radius_sq = 0.1;
    UpdateOptions update{.existence_cap = 1.0 - 1e-6};
};

inline VecX box_center_form(const MotRow& row) {
    VecX z(4);
    z << row.left + 0.5 * row.width, row.top + 0.5 * row.height, row.width, row.height;
    return z;
}

/// Sensor description for box detections: conjugate linear observation of the
/// first four state coordinates, uniform clutter over center positions and
/// sizes.
inline MeasurementModel<VecX> box_measurement_model(const BoxTrackerConfig& config) {
    MeasurementModel<VecX> model;
    model.constant_detection = config.detection_prob;
    model.detection = [pd = config.detection_prob](const VecX&) { return pd; };

    LinearGaussianObs obs;
    obs.H = MatX::Zero(4, 6);
    obs.H.leftCols(4) = MatX::Identity(4, 4);
    obs.R = config.meas_sigma * config.meas_sigma * MatX::Identity(4, 4);
    model.linear_obs = obs;
    model.likelihood = [obs](const VecX& x, const VecX& z) {
        const VecX d = z - obs.H * x;
        double l = 1.0;
        for (Eigen::Index k = 0; k < 4; ++k) l *= normal_pdf(d(k), 0.0, std::sqrt(obs.R(k, k)));
        return l;
    };

    // Clutter box: centers may fall half a box outside the frame.
    const double cx_lo = -0.5 * config.box_max_width;
    const double cx_hi = config.image_width + 0.5 * config.box_max_width;
    const double cy_lo = -0.5 * config.box_max_height;
    const double cy_hi = config.image_height + 0.5 * config.box_max_height;
    const double unit = 1.0 / ((cx_hi - cx_lo) * (cy_hi - cy_lo) * config.box_max_width *
                               config.box_max_height);
    model.clutter_rate = config.clutter_rate;
    model.clutter_density = [=](const VecX& z) {
        const bool inside = z(0) >= cx_lo && z(0) <= cx_hi && z(1) >= cy_lo && z(1) <= cy_hi &&
                            z(2) >= 0.0 && z(2) <= config.box_max_width && z(3) >= 0.0 &&
                            z(3) <= config.box_max_height;
        return inside ? unit : 0.0;
    };
    model.clutter_integrator = [=](const std::function<double(const VecX&)>& g) {
        constexpr int kCx = 8, kCy = 6, kW = 3, kH = 3;
        double acc = 0.0;
        VecX z(4);
        for (int a = 0; a < kCx; ++a)
            for (int b = 0; b < kCy; ++b)
                for (int c = 0; c < kW; ++c)
                    for (int d = 0; d < kH; ++d) {
                        z << cx_lo + (a + 0.5) * (cx_hi - cx_lo) / kCx,
                            cy_lo + (b + 0.5) * (cy_hi - cy_lo) / kCy,
                            (c + 0.5) * config.box_max_width / kW,
                            (d + 0.5) * config.box_max_height / kH;
                        acc += g(z);
                    }
        return acc / (kCx * kCy * kW * kH);
    };
    return model;
}

/// Measurement-wise occlusion in the image: a detection is hidden only when
/// lower boxes cover it entirely, while a coasting track counts as hidden
/// once the coverage of its predicted box passes the ramp threshold.
inline MeasurementWise<VecX> box_mwo_strategy(double overlap_ramp) {
    MeasurementWise<VecX> mwo;
    mwo.meas_visibility = [](const VecX& z, const std::vector<VecX>& others) {
        return 1.0 - box_occlusion_prob(z, others, 1.0, 1.0);
    };
    mwo.occluded_prob_override = [overlap_ramp](const VecX& x, const std::vector<VecX>& others) {
        return box_occlusion_prob(x.head(4), others, 1.0, overlap_ramp);
    };
    return mwo;
}

/// Sequential PMB filter over per-frame detection sets.
struct BoxTracker {
    BoxTrackerConfig config;
    OcclusionMode mode = OcclusionMode::OwoExpval;
    MeasurementModel<VecX> model;
    MotionModel motion;
    PMBState state;
    Rng rng;

    BoxTracker(const BoxTrackerConfig& config_in, OcclusionMode mode_in, std::uint64_t seed = 1)
        : config(config_in), mode(mode_in), model(box_measurement_model(config_in)), rng(seed) {
        LinearGaussianMotion step;
        step.F = MatX::Identity(6, 6);
        step.F(0, 4) = 1.0;
        step.F(1, 5) = 1.0;
        VecX q(6);
        q << config.process_sigma_pos, config.process_sigma_pos, config.process_sigma_size,
            config.process_sigma_size, config.process_sigma_vel, config.process_sigma_vel;
        step.Q = q.array().square().matrix().asDiagonal();
        motion.linear = step;
        motion.survival = config.survival;

        state.undetected.rate = 0.0;
        state.undetected.shape = birth_shape();
    }

    void step(const std::vector<MotRow>& detections) {
        std::vector<VecX> scan;
        scan.reserve(detections.size());
        for (const MotRow& row : detections)
            if (row.conf >= config.min_confidence) scan.push_back(box_center_form(row));
        if (mode == OcclusionMode::Mwo) scan = sanitize_scan(std::move(scan));

        PoissonIntensity birth{config.birth_rate, birth_shape()};
        state = pmb_predict(state, motion, rng, birth);
        state = pmb_update(state, scan, model, make_strategy(), config.update);
        state = cap_and_recycle(state, config.max_tracks, config.max_components,
                                config.recycle_threshold, config.merge_radius_sq);
    }

    /// Confirmed tracks as MOT result rows for the given frame number.
    std::vector<MotRow> estimates(long frame) const {
        std::vector<MotRow> out;
        for (const Track& track : state.tracks) {
            const double existence = track.existence();
            if (existence < config.existence_threshold) continue;
            const VecX mean = density_mean(track.merged_density());
            MotRow row;
            row.frame = frame;
            row.id = track.label;
            row.width = std::max(mean(2), 0.0);
            row.height = std::max(mean(3), 0.0);
            row.left = mean(0) - 0.5 * row.width;
            row.top = mean(1) - 0.5 * row.height;
            row.conf = existence;
            out.push_back(row);
        }
        return out;
    }

    /// Broad stationary prior over the frame for yet-undetected objects.
    GaussianDensity birth_shape() const {
        GaussianDensity g;
        g.mean = VecX(6);
        g.mean << 0.5 * config.image_width, 0.5 * config.image_height,
            0.5 * config.box_max_width, 0.5 * config.box_max_height, 0.0, 0.0;
        VecX sd(6);
        sd << 0.5 * config.image_width, 0.5 * config.image_height, 0.25 * config.box_max_width,
            0.25 * config.box_max_height, config.init_speed_sigma, config.init_speed_sigma;
        g.cov = sd.array().square().matrix().asDiagonal();
        return g;
    }

    OcclusionStrategy<VecX> make_strategy() const {
        switch (mode) {
            case OcclusionMode::None: return NoOcclusion{};
            case OcclusionMode::OwoExpval: {
                ObjectWiseExpval expval;
                expval.kernel = box_overlap_kernel(config.overlap_ramp);
                return expval;
            }
            case OcclusionMode::Mwo: return box_mwo_strategy(config.overlap_ramp);
            case OcclusionMode::OwoGrid:
                throw DegenerateModelError(
                    "box tracker: grid occlusion is not defined for image boxes");
        }
        return NoOcclusion{};
    }

    /// Drop detections fully covered by lower boxes (farthest first) until the
    /// scan is self-consistent under the measurement-wise model.
    std::vector<VecX> sanitize_scan(std::vector<VecX> scan) const {
        const auto blocked = [&](std::size_t j) {
            std::vector<VecX> others;
            others.reserve(scan.size() - 1);
            for (std::size_t k = 0; k < scan.size(); ++k)
                if (k != j) others.push_back(scan[k]);
            return box_occlusion_prob(scan[j], others, 1.0, 1.0) >= 1.0;
        };
        for (;;) {
            std::optional<std::size_t> worst;
            const auto bottom = [&](std::size_t j) { return scan[j](1) + 0.5 * scan[j](3); };
            for (std::size_t j = 0; j < scan.size(); ++j) {
                if (!blocked(j)) continue;
                if (!worst || bottom(j) < bottom(*worst) ||
                    (bottom(j) == bottom(*worst) && scan[j](0) < scan[*worst](0)))
                    worst = j;
            }
            if (!worst) return scan;
            scan.erase(scan.begin() + static_cast<std::ptrdiff_t>(*worst));
        }
    }
};

/// Run the tracker over a whole detection file; rows come out sorted by frame
/// then track label, ready for MOT result CSV writing.
inline std::vector<MotRow> track_detections(const DetectionFrames& detections,
                                            const BoxTrackerConfig& config, OcclusionMode mode,
                                            std::uint64_t seed = 1) {
    BoxTracker tracker(config, mode, seed);
    std::vector<MotRow> out;
    for (std::size_t t = 0; t < detections.frames.size(); ++t) {
        tracker.step(detections.frames[t]);
        for (MotRow& row : tracker.estimates(detections.first_frame + static_cast<long>(t)))
            out.push_back(row);
    }
    return out;
}

}  // namespace occtrack
