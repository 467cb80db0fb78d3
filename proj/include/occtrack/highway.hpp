#pragma once

#include "occtrack/common.hpp"
#include "occtrack/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <utility>
#include <vector>

namespace occtrack {

/// Four parallel lanes past a stationary roadside point sensor. Lane offsets
/// are lateral distances from the sensor line; vehicles keep their lane's
/// speed for life.
struct HighwayConfig {
    std::vector<double> lane_offsets{5.0, 8.5, 12.0, 15.5};
    std::vector<double> lane_speeds{22.0, 25.0, 28.0, 31.0};
    double length_min = 4.0;
    double length_max = 6.0;
    double spawn_rate = 0.2;   // vehicles/second/lane
    double min_headway = 8.0;  // meters of clear road required behind a spawn
    double sensor_x = 0.0;
    double sensor_y = 0.0;
    double dt = 0.2;
    double detection_prob = 0.95;
    double endpoint_sigma = 0.3;
    double clutter_rate = 0.5;  // expected false readings per scan
    double clutter_lo = -50.0;
    double clutter_hi = 50.0;
    double clutter_length_max = 6.0;
    double entry_x = -60.0;
    double exit_x = 60.0;
    std::uint64_t seed = 0;
};

inline void validate(const HighwayConfig& config) {
    if (!(config.dt > 0.0)) throw std::invalid_argument("highway config: dt must be positive");
    if (config.lane_offsets.empty() || config.lane_offsets.size() != config.lane_speeds.size())
        throw std::invalid_argument("highway config: lanes and speeds must pair up");
    for (std::size_t k = 0; k + 1 < config.lane_offsets.size(); ++k)
        if (!(config.lane_offsets[k] < config.lane_offsets[k + 1]))
            throw std::invalid_argument("highway config: lane offsets must strictly increase");
    if (!(config.lane_offsets.front() > config.sensor_y))
        throw std::invalid_argument("highway config: lanes must lie beyond the sensor");
    if (!(config.min_headway > config.length_max))
        throw std::invalid_argument("highway config: headway must exceed the longest vehicle");
    if (!(config.length_min > 0.0) || !(config.length_min <= config.length_max))
        throw std::invalid_argument("highway config: bad vehicle length range");
}

struct Vehicle {
    int lane = 0;
    double back = 0.0;    // longitudinal position of the rear end
    double length = 0.0;  // widths are neglected
    double velocity = 0.0;
};

struct HighwayWorld {
    std::vector<Vehicle> vehicles;
};

enum class OccludedEnd { Back, Front };

/// One sensor return. Full and Clutter carry both endpoints; Partial carries
/// the one observed endpoint plus the interval the hidden endpoint must lie
/// in (the occluded area behind a nearer reading).
struct SensorReading {
    enum class Kind { Full, Partial, Clutter };
    Kind kind = Kind::Full;
    int lane = 0;
    double back = 0.0;
    double front = 0.0;
    double occluded_lo = 0.0;
    double occluded_hi = 0.0;
    OccludedEnd occluded_end = OccludedEnd::Back;

    /// Longitudinal extent the sensor actually saw.
    double visible_lo() const {
        return kind == Kind::Partial && occluded_end == OccludedEnd::Back ? occluded_hi : back;
    }
    double visible_hi() const {
        return kind == Kind::Partial && occluded_end == OccludedEnd::Front ? occluded_lo : front;
    }
    double visible_end() const {
        return occluded_end == OccludedEnd::Back ? front : back;
    }
};

namespace detail {

struct Span {
    double lo = 0.0;
    double hi = 0.0;
    double width() const { return hi - lo; }
};

inline std::vector<Span> merge_spans(std::vector<Span> spans) {
    std::sort(spans.begin(), spans.end(),
              [](const Span& a, const Span& b) { return a.lo < b.lo; });
    std::vector<Span> merged;
    for (const Span& s : spans) {
        if (s.hi <= s.lo) continue;
        if (!merged.empty() && s.lo <= merged.back().hi)
            merged.back().hi = std::max(merged.back().hi, s.hi);
        else
            merged.push_back(s);
    }
    return merged;
}

/// Pieces of `span` not covered by the merged union `cover`.
inline std::vector<Span> subtract_spans(const Span& span, const std::vector<Span>& cover) {
    std::vector<Span> left;
    double cursor = span.lo;
    for (const Span& c : cover) {
        if (c.hi <= cursor) continue;
        if (c.lo >= span.hi) break;
        if (c.lo > cursor) left.push_back({cursor, std::min(c.lo, span.hi)});
        cursor = std::max(cursor, c.hi);
        if (cursor >= span.hi) break;
    }
    if (cursor < span.hi) left.push_back({cursor, span.hi});
    return left;
}

inline bool covers_point(const std::vector<Span>& cover, double x) {
    for (const Span& c : cover)
        if (c.lo <= x && x <= c.hi) return true;
    return false;
}

/// The merged-cover member containing x, if any.
inline const Span* covering_span(const std::vector<Span>& cover, double x) {
    for (const Span& c : cover)
        if (c.lo <= x && x <= c.hi) return &c;
    return nullptr;
}

}  // namespace detail

/// Viewing angle of longitudinal position x on a lane, as seen by the sensor;
/// monotone in x.
inline double highway_angle(const HighwayConfig& config, double x, int lane) {
    return std::atan2(x - config.sensor_x,
                      config.lane_offsets[static_cast<std::size_t>(lane)] - config.sensor_y);
}

/// Inverse of highway_angle on the given lane.
inline double highway_x(const HighwayConfig& config, double angle, int lane) {
    return config.sensor_x + (config.lane_offsets[static_cast<std::size_t>(lane)] -
                              config.sensor_y) *
                                 std::tan(angle);
}

namespace detail {

inline Span angular_span(const HighwayConfig& config, double lo, double hi, int lane) {
    return {highway_angle(config, lo, lane), highway_angle(config, hi, lane)};
}

}  // namespace detail

/// Advance one step: constant-velocity motion, exit-boundary removal, and
/// per-lane Poisson spawning that respects the minimum headway.
inline void step_world(HighwayWorld& world, const HighwayConfig& config, Rng& rng) {
    for (Vehicle& v : world.vehicles) v.back += v.velocity * config.dt;
    std::erase_if(world.vehicles, [&](const Vehicle& v) { return v.back > config.exit_x; });
    for (int lane = 0; lane < static_cast<int>(config.lane_offsets.size()); ++lane) {
        const int arrivals = poisson_sample(rng, config.spawn_rate * config.dt);
        for (int a = 0; a < arrivals; ++a) {
            Vehicle fresh;
            fresh.lane = lane;
            fresh.back = config.entry_x;
            fresh.length = uniform(rng, config.length_min, config.length_max);
            fresh.velocity = config.lane_speeds[static_cast<std::size_t>(lane)];
            bool clear = true;
            for (const Vehicle& v : world.vehicles)
                if (v.lane == lane && v.back - (fresh.back + fresh.length) < config.min_headway)
                    clear = false;
            if (clear) world.vehicles.push_back(fresh);
        }
    }
}

/// Visible longitudinal sub-spans of each vehicle under true-geometry
/// occlusion: a span is clipped by the union of strictly-nearer-lane
/// vehicles' angular spans. Empty means unseen.
inline std::vector<std::vector<detail::Span>> visible_spans_owo(const HighwayWorld& world,
                                                                const HighwayConfig& config) {
    std::vector<std::vector<detail::Span>> out(world.vehicles.size());
    for (std::size_t i = 0; i < world.vehicles.size(); ++i) {
        const Vehicle& v = world.vehicles[i];
        std::vector<detail::Span> occluders;
        for (const Vehicle& w : world.vehicles)
            if (w.lane < v.lane)
                occluders.push_back(
                    detail::angular_span(config, w.back, w.back + w.length, w.lane));
        const auto cover = detail::merge_spans(occluders);
        const auto visible = detail::subtract_spans(
            detail::angular_span(config, v.back, v.back + v.length, v.lane), cover);
        for (const detail::Span& s : visible)
            out[i].push_back({highway_x(config, s.lo, v.lane), highway_x(config, s.hi, v.lane)});
    }
    return out;
}

namespace detail {

struct SenseDraws {
    std::vector<char> detected;
    std::vector<double> back_noise;
    std::vector<double> front_noise;
    std::vector<SensorReading> clutter;
};

/// All random draws for one scan, consumed in a fixed order so the two
/// sensing modes stay comparable under one seed.
inline SenseDraws draw_scan(const HighwayWorld& world, const HighwayConfig& config, Rng& rng) {
    SenseDraws draws;
    for (std::size_t i = 0; i < world.vehicles.size(); ++i) {
        draws.detected.push_back(uniform01(rng) < config.detection_prob ? 1 : 0);
        draws.back_noise.push_back(normal_sample(rng, 0.0, config.endpoint_sigma));
        draws.front_noise.push_back(normal_sample(rng, 0.0, config.endpoint_sigma));
    }
    const int clutter_count = poisson_sample(rng, config.clutter_rate);
    for (int k = 0; k < clutter_count; ++k) {
        SensorReading c;
        c.kind = SensorReading::Kind::Clutter;
        c.lane = static_cast<int>(
            uniform(rng, 0.0, static_cast<double>(config.lane_offsets.size())));
        c.lane = std::min(c.lane, static_cast<int>(config.lane_offsets.size()) - 1);
        c.back = uniform(rng, config.clutter_lo, config.clutter_hi);
        c.front = c.back + uniform(rng, 0.0, config.clutter_length_max);
        draws.clutter.push_back(c);
    }
    return draws;
}

/// Classify a span against a cover union by its endpoints: both free → Full,
/// one free → Partial censored over the covering stretch, none → dropped.
inline bool clip_reading(const HighwayConfig& config, const std::vector<Span>& cover,
                         SensorReading& reading) {
    const double a_back = highway_angle(config, reading.back, reading.lane);
    const double a_front = highway_angle(config, reading.front, reading.lane);
    const Span* back_cover = covering_span(cover, a_back);
    const Span* front_cover = covering_span(cover, a_front);
    if (back_cover && front_cover) return false;
    if (!back_cover && !front_cover) return true;
    const Span* shadow = back_cover ? back_cover : front_cover;
    const double lo = highway_x(config, shadow->lo, reading.lane);
    const double hi = highway_x(config, shadow->hi, reading.lane);
    reading.kind = SensorReading::Kind::Partial;
    reading.occluded_lo = lo;
    reading.occluded_hi = hi;
    reading.occluded_end = back_cover ? OccludedEnd::Back : OccludedEnd::Front;
    return true;
}

}  // namespace detail

enum class SenseMode { ObjectWise, MeasurementWise };

/// One scan. Object-wise: occlusion from true geometry, then noise on the
/// surviving endpoints and raw clutter appended. Measurement-wise: noisy
/// candidates for every detected vehicle plus clutter, then nearer readings'
/// visible spans clip farther candidates.
inline std::vector<SensorReading> sense(const HighwayWorld& world, const HighwayConfig& config,
                                        SenseMode mode, Rng& rng) {
    const detail::SenseDraws draws = detail::draw_scan(world, config, rng);
    std::vector<SensorReading> readings;

    if (mode == SenseMode::ObjectWise) {
        for (std::size_t i = 0; i < world.vehicles.size(); ++i) {
            if (!draws.detected[i]) continue;
            const Vehicle& v = world.vehicles[i];
            std::vector<detail::Span> occluders;
            for (const Vehicle& w : world.vehicles)
                if (w.lane < v.lane)
                    occluders.push_back(
                        detail::angular_span(config, w.back, w.back + w.length, w.lane));
            const auto cover = detail::merge_spans(occluders);
            SensorReading reading;
            reading.lane = v.lane;
            reading.back = v.back;
            reading.front = v.back + v.length;
            if (!detail::clip_reading(config, cover, reading)) continue;
            // Noise lands only on physically observed endpoints.
            if (reading.kind != SensorReading::Kind::Partial ||
                reading.occluded_end == OccludedEnd::Front)
                reading.back += draws.back_noise[i];
            if (reading.kind != SensorReading::Kind::Partial ||
                reading.occluded_end == OccludedEnd::Back)
                reading.front += draws.front_noise[i];
            readings.push_back(reading);
        }
        for (const SensorReading& c : draws.clutter) readings.push_back(c);
        return readings;
    }

    // Candidate readings in scan order, then clip lane by lane, nearest first.
    std::vector<SensorReading> candidates;
    for (std::size_t i = 0; i < world.vehicles.size(); ++i) {
        if (!draws.detected[i]) continue;
        const Vehicle& v = world.vehicles[i];
        SensorReading reading;
        reading.lane = v.lane;
        reading.back = v.back + draws.back_noise[i];
        reading.front = v.back + v.length + draws.front_noise[i];
        if (reading.front < reading.back) std::swap(reading.back, reading.front);
        candidates.push_back(reading);
    }
    for (const SensorReading& c : draws.clutter) candidates.push_back(c);

    std::vector<detail::Span> visible_spans;
    for (int lane = 0; lane < static_cast<int>(config.lane_offsets.size()); ++lane) {
        const auto cover = detail::merge_spans(visible_spans);
        std::vector<detail::Span> emitted;
        for (const SensorReading& candidate : candidates) {
            if (candidate.lane != lane) continue;
            SensorReading reading = candidate;
            if (!detail::clip_reading(config, cover, reading)) {
                // Both endpoints hidden: no object reading, but any visible
                // middle fragments are still returns and keep occluding.
                for (const detail::Span& piece : detail::subtract_spans(
                         detail::angular_span(config, reading.back, reading.front, lane), cover))
                    emitted.push_back(piece);
                continue;
            }
            readings.push_back(reading);
            emitted.push_back(detail::angular_span(config, reading.visible_lo(),
                                                   reading.visible_hi(), lane));
        }
        visible_spans.insert(visible_spans.end(), emitted.begin(), emitted.end());
    }
    return readings;
}

/// Likelihood of one reading given a hypothesised vehicle extent on the same
/// lane: Gaussians on observed endpoints, a censored Gaussian mass for a
/// hidden one.
inline double reading_likelihood(const SensorReading& reading, double back, double length,
                                 const HighwayConfig& config) {
    const double sigma = config.endpoint_sigma;
    const double front = back + length;
    if (reading.kind != SensorReading::Kind::Partial)
        return normal_pdf(reading.back, back, sigma) * normal_pdf(reading.front, front, sigma);
    if (reading.occluded_end == OccludedEnd::Back)
        return normal_pdf(reading.front, front, sigma) *
               normal_interval_mass(reading.occluded_lo, reading.occluded_hi, back, sigma);
    return normal_pdf(reading.back, back, sigma) *
           normal_interval_mass(reading.occluded_lo, reading.occluded_hi, front, sigma);
}

/// Deterministic restricted visibility for the trackers: a hypothetical
/// reading is invisible exactly when its angular span is covered by the
/// union of strictly-nearer visible readings' spans.
inline double tracker_meas_visibility(const SensorReading& z,
                                      const std::vector<SensorReading>& Z_visible,
                                      const HighwayConfig& config) {
    std::vector<detail::Span> nearer;
    for (const SensorReading& r : Z_visible)
        if (r.lane < z.lane)
            nearer.push_back(detail::angular_span(config, r.visible_lo(), r.visible_hi(), r.lane));
    const auto cover = detail::merge_spans(nearer);
    const auto left = detail::subtract_spans(
        detail::angular_span(config, z.visible_lo(), z.visible_hi(), z.lane), cover);
    double width = 0.0;
    for (const detail::Span& s : left) width += s.width();
    return width > 1e-12 ? 1.0 : 0.0;
}

inline const char* to_string(SensorReading::Kind kind) {
    switch (kind) {
        case SensorReading::Kind::Full: return "full";
        case SensorReading::Kind::Partial: return "partial";
        default: return "clutter";
    }
}

inline void write_readings_csv(std::ostream& out,
                               const std::vector<std::vector<SensorReading>>& steps) {
    out << "step,kind,lane,back,front,occluded_lo,occluded_hi,occluded_end\n";
    for (std::size_t t = 0; t < steps.size(); ++t) {
        for (const SensorReading& r : steps[t]) {
            out << t << ',' << to_string(r.kind) << ',' << r.lane << ','
                << format_number(r.back) << ',' << format_number(r.front) << ',';
            if (r.kind == SensorReading::Kind::Partial) {
                out << format_number(r.occluded_lo) << ',' << format_number(r.occluded_hi) << ','
                    << (r.occluded_end == OccludedEnd::Back ? "back" : "front");
            } else {
                out << ",,";
            }
            out << '\n';
        }
    }
}

inline void write_truth_csv(std::ostream& out,
                            const std::vector<std::vector<Vehicle>>& steps) {
    out << "step,lane,back,length\n";
    for (std::size_t t = 0; t < steps.size(); ++t)
        for (const Vehicle& v : steps[t])
            out << t << ',' << v.lane << ',' << format_number(v.back) << ','
                << format_number(v.length) << '\n';
}

}  // namespace occtrack
