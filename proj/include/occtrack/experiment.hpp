#pragma once

#include "occtrack/box_tracker.hpp"
#include "occtrack/highway_tracker.hpp"
#include "occtrack/metrics.hpp"

#include <json.hpp>

#include <cstdint>
#include <future>
#include <iomanip>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace occtrack {

using Json = nlohmann::ordered_json;

inline const char* to_string(OcclusionMode mode) {
    switch (mode) {
        case OcclusionMode::None: return "none";
        case OcclusionMode::OwoExpval: return "owo-expval";
        case OcclusionMode::OwoGrid: return "owo-grid";
        case OcclusionMode::Mwo: return "mwo";
    }
    return "none";
}

inline OcclusionMode parse_occlusion_mode(const std::string& name) {
    if (name == "none") return OcclusionMode::None;
    if (name == "owo-expval") return OcclusionMode::OwoExpval;
    if (name == "owo-grid") return OcclusionMode::OwoGrid;
    if (name == "mwo") return OcclusionMode::Mwo;
    throw ParseError("unknown occlusion mode '" + name +
                     "' (expected none, owo-expval, owo-grid, or mwo)");
}

inline const char* to_string(SenseMode mode) {
    return mode == SenseMode::ObjectWise ? "owo" : "mwo";
}

inline SenseMode parse_sense_mode(const std::string& name) {
    if (name == "owo") return SenseMode::ObjectWise;
    if (name == "mwo") return SenseMode::MeasurementWise;
    throw ParseError("unknown simulation mode '" + name + "' (expected owo or mwo)");
}

// ---- Config JSON ----

namespace detail {

/// Field-by-field object reader that rejects unknown keys, so config typos
/// fail loudly instead of silently falling back to defaults.
class ObjectReader {
public:
    ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ParseError(where_ + ": expected a JSON object");
    }

    template <class T>
    ObjectReader& field(const char* name, T& out) {
        if (const auto it = j_.find(name); it != j_.end()) {
            try {
                it->get_to(out);
            } catch (const Json::exception&) {
                throw ParseError(where_ + "." + name + ": wrong type");
            }
        }
        known_.push_back(name);
        return *this;
    }

    const Json* child(const char* name) {
        known_.push_back(name);
        const auto it = j_.find(name);
        return it != j_.end() ? &*it : nullptr;
    }

    void finish() const {
        for (const auto& item : j_.items()) {
            bool ok = false;
            for (const char* name : known_) ok = ok || item.key() == name;
            if (!ok) throw ParseError(where_ + ": unknown key '" + item.key() + "'");
        }
    }

private:
    const Json& j_;
    std::string where_;
    std::vector<const char*> known_;
};

}  // namespace detail

inline void read_config(const Json& j, HighwayConfig& config, const std::string& where = "scene") {
    detail::ObjectReader r(j, where);
    r.field("lane_offsets", config.lane_offsets)
        .field("lane_speeds", config.lane_speeds)
        .field("length_min", config.length_min)
        .field("length_max", config.length_max)
        .field("spawn_rate", config.spawn_rate)
        .field("min_headway", config.min_headway)
        .field("sensor_x", config.sensor_x)
        .field("sensor_y", config.sensor_y)
        .field("dt", config.dt)
        .field("detection_prob", config.detection_prob)
        .field("endpoint_sigma", config.endpoint_sigma)
        .field("clutter_rate", config.clutter_rate)
        .field("clutter_lo", config.clutter_lo)
        .field("clutter_hi", config.clutter_hi)
        .field("clutter_length_max", config.clutter_length_max)
        .field("entry_x", config.entry_x)
        .field("exit_x", config.exit_x)
        .field("seed", config.seed)
        .finish();
    validate(config);
}

inline Json to_json(const HighwayConfig& config) {
    return Json{{"lane_offsets", config.lane_offsets},
                {"lane_speeds", config.lane_speeds},
                {"length_min", config.length_min},
                {"length_max", config.length_max},
                {"spawn_rate", config.spawn_rate},
                {"min_headway", config.min_headway},
                {"sensor_x", config.sensor_x},
                {"sensor_y", config.sensor_y},
                {"dt", config.dt},
                {"detection_prob", config.detection_prob},
                {"endpoint_sigma", config.endpoint_sigma},
                {"clutter_rate", config.clutter_rate},
                {"clutter_lo", config.clutter_lo},
                {"clutter_hi", config.clutter_hi},
                {"clutter_length_max", config.clutter_length_max},
                {"entry_x", config.entry_x},
                {"exit_x", config.exit_x},
                {"seed", config.seed}};
}

inline void read_config(const Json& j, HighwayTrackerConfig& config,
                        const std::string& where = "tracker") {
    detail::ObjectReader r(j, where);
    r.field("birth_particles_per_lane", config.birth_particles_per_lane)
        .field("max_track_particles", config.max_track_particles)
        .field("max_undetected_particles", config.max_undetected_particles)
        .field("process_noise_back", config.process_noise_back)
        .field("process_noise_length", config.process_noise_length)
        .field("min_length", config.min_length)
        .field("existence_threshold", config.existence_threshold)
        .field("expval_beta", config.expval_beta)
        .field("grid_cells", config.grid_cells)
        .field("max_tracks", config.max_tracks)
        .field("max_components", config.max_components)
        .field("recycle_threshold", config.recycle_threshold)
        .field("merge_radius_sq", config.merge_radius_sq)
        .field("spawn_threshold", config.update.spawn_threshold)
        .field("lbp_tol", config.update.lbp_tol)
        .field("lbp_max_iter", config.update.lbp_max_iter)
        .field("exact_when_small", config.update.exact_when_small)
        .finish();
}

inline Json to_json(const HighwayTrackerConfig& config) {
    return Json{{"birth_particles_per_lane", config.birth_particles_per_lane},
                {"max_track_particles", config.max_track_particles},
                {"max_undetected_particles", config.max_undetected_particles},
                {"process_noise_back", config.process_noise_back},
                {"process_noise_length", config.process_noise_length},
                {"min_length", config.min_length},
                {"existence_threshold", config.existence_threshold},
                {"expval_beta", config.expval_beta},
                {"grid_cells", config.grid_cells},
                {"max_tracks", config.max_tracks},
                {"max_components", config.max_components},
                {"recycle_threshold", config.recycle_threshold},
                {"merge_radius_sq", config.merge_radius_sq},
                {"spawn_threshold", config.update.spawn_threshold},
                {"lbp_tol", config.update.lbp_tol},
                {"lbp_max_iter", config.update.lbp_max_iter},
                {"exact_when_small", config.update.exact_when_small}};
}

inline void read_config(const Json& j, GospaParams& params, const std::string& where = "gospa") {
    detail::ObjectReader r(j, where);
    r.field("cutoff", params.cutoff)
        .field("order", params.order)
        .field("alpha", params.card_alpha)
        .finish();
}

inline Json to_json(const GospaParams& params) {
    return Json{{"cutoff", params.cutoff}, {"order", params.order}, {"alpha", params.card_alpha}};
}

inline void read_config(const Json& j, BoxTrackerConfig& config,
                        const std::string& where = "tracker") {
    detail::ObjectReader r(j, where);
    r.field("image_width", config.image_width)
        .field("image_height", config.image_height)
        .field("box_max_width", config.box_max_width)
        .field("box_max_height", config.box_max_height)
        .field("survival", config.survival)
        .field("detection_prob", config.detection_prob)
        .field("clutter_rate", config.clutter_rate)
        .field("birth_rate", config.birth_rate)
        .field("meas_sigma", config.meas_sigma)
        .field("process_sigma_pos", config.process_sigma_pos)
        .field("process_sigma_size", config.process_sigma_size)
        .field("process_sigma_vel", config.process_sigma_vel)
        .field("init_speed_sigma", config.init_speed_sigma)
        .field("overlap_ramp", config.overlap_ramp)
        .field("min_confidence", config.min_confidence)
        .field("existence_threshold", config.existence_threshold)
        .field("max_tracks", config.max_tracks)
        .field("max_components", config.max_components)
        .field("recycle_threshold", config.recycle_threshold)
        .field("merge_radius_sq", config.merge_radius_sq)
        .field("spawn_threshold", config.update.spawn_threshold)
        .field("lbp_tol", config.update.lbp_tol)
        .field("lbp_max_iter", config.update.lbp_max_iter)
        .field("exact_when_small", config.update.exact_when_small)
        .finish();
}

inline Json to_json(const BoxTrackerConfig& config) {
    return Json{{"image_width", config.image_width},
                {"image_height", config.image_height},
                {"box_max_width", config.box_max_width},
                {"box_max_height", config.box_max_height},
                {"survival", config.survival},
                {"detection_prob", config.detection_prob},
                {"clutter_rate", config.clutter_rate},
                {"birth_rate", config.birth_rate},
                {"meas_sigma", config.meas_sigma},
                {"process_sigma_pos", config.process_sigma_pos},
                {"process_sigma_size", config.process_sigma_size},
                {"process_sigma_vel", config.process_sigma_vel},
                {"init_speed_sigma", config.init_speed_sigma},
                {"overlap_ramp", config.overlap_ramp},
                {"min_confidence", config.min_confidence},
                {"existence_threshold", config.existence_threshold},
                {"max_tracks", config.max_tracks},
                {"max_components", config.max_components},
                {"recycle_threshold", config.recycle_threshold},
                {"merge_radius_sq", config.merge_radius_sq},
                {"spawn_threshold", config.update.spawn_threshold},
                {"lbp_tol", config.update.lbp_tol},
                {"lbp_max_iter", config.update.lbp_max_iter},
                {"exact_when_small", config.update.exact_when_small}};
}

// ---- Highway experiment ----

struct HighwayExperimentSpec {
    HighwayConfig scene;
    HighwayTrackerConfig tracker;
    GospaParams gospa;
    SenseMode sim_mode = SenseMode::MeasurementWise;
    OcclusionMode occlusion = OcclusionMode::Mwo;
    int steps = 2000;
    std::uint64_t seed = 0;
};

inline HighwayExperimentSpec read_highway_spec(const Json& j) {
    HighwayExperimentSpec spec;
    detail::ObjectReader r(j, "config");
    if (const Json* scene = r.child("scene")) read_config(*scene, spec.scene);
    if (const Json* tracker = r.child("tracker")) read_config(*tracker, spec.tracker);
    if (const Json* gospa = r.child("gospa")) read_config(*gospa, spec.gospa);
    std::string sim = to_string(spec.sim_mode);
    std::string occlusion = to_string(spec.occlusion);
    spec.seed = spec.scene.seed;
    r.field("simulation", sim).field("occlusion", occlusion).field("steps", spec.steps);
    r.field("seed", spec.seed).finish();
    spec.sim_mode = parse_sense_mode(sim);
    spec.occlusion = parse_occlusion_mode(occlusion);
    if (spec.steps < 0) throw ParseError("config.steps: must be non-negative");
    return spec;
}

inline Json to_json(const HighwayExperimentSpec& spec) {
    return Json{{"scene", to_json(spec.scene)},
                {"tracker", to_json(spec.tracker)},
                {"gospa", to_json(spec.gospa)},
                {"simulation", to_string(spec.sim_mode)},
                {"occlusion", to_string(spec.occlusion)},
                {"steps", spec.steps},
                {"seed", spec.seed}};
}

/// One scan's score and set sizes.
struct StepScore {
    double total = 0.0;
    double localization = 0.0;
    double missed = 0.0;
    double false_alarm = 0.0;
    int truth = 0;
    int estimated = 0;
};

/// Per-step scores plus run-level summaries. Averages carry a defined flag so
/// empty runs stay representable.
struct ExperimentReport {
    HighwayExperimentSpec spec;
    std::vector<StepScore> steps;
    bool averages_defined = false;
    double avg_total = 0.0;
    double avg_localization = 0.0;
    double avg_missed = 0.0;
    double avg_false = 0.0;
    bool cardinality_defined = false;
    double cardinality = 0.0;
};

/// Simulate, track, and score one replication. The world and sensor draws
/// depend only on the seed and the simulation mode, so different trackers on
/// the same seed face identical scans.
inline ExperimentReport run_highway_experiment(const HighwayExperimentSpec& spec) {
    validate(spec.scene);
    ExperimentReport report;
    report.spec = spec;

    Rng world_rng(spec.seed);
    Rng sense_rng(spec.seed ^ 0x9e3779b97f4a7c15ULL);
    HighwayTracker tracker(spec.scene, spec.occlusion, spec.tracker,
                           spec.seed ^ 0x94d049bb133111ebULL);
    HighwayWorld world;

    std::vector<int> truth_counts, estimate_counts;
    const BaseMetric<VecX> base = euclidean_metric;
    report.steps.reserve(static_cast<std::size_t>(spec.steps));
    for (int t = 0; t < spec.steps; ++t) {
        step_world(world, spec.scene, world_rng);
        tracker.step(sense(world, spec.scene, spec.sim_mode, sense_rng));

        std::vector<VecX> truth;
        truth.reserve(world.vehicles.size());
        for (const Vehicle& v : world.vehicles) {
            VecX u(2);
            u << v.back, v.length;
            truth.push_back(std::move(u));
        }
        std::vector<VecX> estimate;
        for (const HighwayEstimate& e : tracker.estimates()) {
            VecX u(2);
            u << e.back, e.length;
            estimate.push_back(std::move(u));
        }

        const GospaDecomposition d = gospa(truth, estimate, base, spec.gospa);
        report.steps.push_back({d.total, d.localization, d.missed, d.false_alarm,
                                static_cast<int>(truth.size()),
                                static_cast<int>(estimate.size())});
        truth_counts.push_back(static_cast<int>(truth.size()));
        estimate_counts.push_back(static_cast<int>(estimate.size()));
    }

    if (!report.steps.empty()) {
        report.averages_defined = true;
        for (const StepScore& s : report.steps) {
            report.avg_total += s.total;
            report.avg_localization += s.localization;
            report.avg_missed += s.missed;
            report.avg_false += s.false_alarm;
        }
        const double n = static_cast<double>(report.steps.size());
        report.avg_total /= n;
        report.avg_localization /= n;
        report.avg_missed /= n;
        report.avg_false /= n;
    }
    try {
        report.cardinality = cardinality_ratio(truth_counts, estimate_counts);
        report.cardinality_defined = true;
    } catch (const UndefinedValueError&) {
        report.cardinality_defined = false;
    }
    return report;
}

/// Independent replications in parallel; each one is sequential inside.
inline std::vector<ExperimentReport> run_replications(const HighwayExperimentSpec& base,
                                                      const std::vector<std::uint64_t>& seeds) {
    std::vector<ExperimentReport> reports(seeds.size());
    std::vector<std::future<ExperimentReport>> jobs;
    jobs.reserve(seeds.size());
    for (std::uint64_t seed : seeds) {
        HighwayExperimentSpec spec = base;
        spec.seed = seed;
        jobs.push_back(std::async(std::launch::async,
                                  [spec] { return run_highway_experiment(spec); }));
    }
    for (std::size_t k = 0; k < jobs.size(); ++k) reports[k] = jobs[k].get();
    return reports;
}

inline Json to_json(const ExperimentReport& report, bool include_steps = true) {
    Json j{{"experiment", "highway"},
           {"seed", report.spec.seed},
           {"config", to_json(report.spec)}};
    if (include_steps) {
        Json steps = Json::array();
        for (const StepScore& s : report.steps)
            steps.push_back(Json{{"total", s.total},
                                 {"localization", s.localization},
                                 {"missed", s.missed},
                                 {"false", s.false_alarm},
                                 {"truth", s.truth},
                                 {"estimated", s.estimated}});
        j["steps"] = std::move(steps);
    }
    Json averages{{"defined", report.averages_defined}};
    if (report.averages_defined) {
        averages["total"] = report.avg_total;
        averages["localization"] = report.avg_localization;
        averages["missed"] = report.avg_missed;
        averages["false"] = report.avg_false;
    }
    j["averages"] = std::move(averages);
    j["cardinality_ratio"] =
        report.cardinality_defined ? Json(report.cardinality) : Json(nullptr);
    return j;
}

/// Human-readable run summary, aligned key/value columns.
inline std::string format_report_summary(const ExperimentReport& report) {
    std::ostringstream out;
    out << std::left;
    const auto line = [&](const std::string& key, const std::string& value) {
        out << "  " << std::setw(22) << key << value << '\n';
    };
    out << "highway experiment\n";
    line("seed", std::to_string(report.spec.seed));
    line("steps", std::to_string(report.steps.size()));
    line("simulation", to_string(report.spec.sim_mode));
    line("occlusion", to_string(report.spec.occlusion));
    if (report.averages_defined) {
        line("average gospa", format_number(report.avg_total));
        line("  localization", format_number(report.avg_localization));
        line("  missed penalty", format_number(report.avg_missed));
        line("  false penalty", format_number(report.avg_false));
    } else {
        line("average gospa", "undefined (no steps)");
    }
    line("cardinality ratio",
         report.cardinality_defined ? format_number(report.cardinality) : "undefined");
    return out.str();
}

}  // namespace occtrack
