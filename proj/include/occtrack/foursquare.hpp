#pragma once

#include "occtrack/errors.hpp"

#include <boost/rational.hpp>

#include <array>
#include <string>
#include <vector>

namespace occtrack {

/// Discrete two-row benchmark world: a guaranteed bottom object and a
/// maybe-present top object, each occupying the left or right square of its
/// row. Each existing object reports its own square with probability 1/2,
/// the other square of its row with 1/4, and nothing with 1/4; there are no
/// false positives. The bottom row sits nearer the sensor, so an aligned
/// bottom object (or its measurement) can hide the top one.

using Rational = boost::rational<long long>;

enum class SquareMeas { None, Left, Right };

struct Outcome {
    SquareMeas top = SquareMeas::None;
    SquareMeas bottom = SquareMeas::None;

    friend bool operator==(const Outcome&, const Outcome&) = default;
};

enum class FourSquareMode { None, ObjectWise, MeasurementWise };

/// One row of the exhaustive joint: a latent configuration (top state 0 =
/// absent, 1 = left, 2 = right; bottom column), the visible outcome it
/// produced, and its exact probability.
struct FourSquareEntry {
    int top_state = 0;
    bool bottom_left = true;
    Outcome outcome;
    Rational probability;
};

struct FourSquarePosterior {
    Rational p_top_exists;
    Rational p_top_left_given_exists;
    Rational p_bottom_left;
};

namespace detail {

struct MeasOption {
    SquareMeas meas = SquareMeas::None;
    Rational prob;
};

/// Measurement channel of an existing object in the given column.
inline std::array<MeasOption, 3> square_channel(bool left) {
    const SquareMeas own = left ? SquareMeas::Left : SquareMeas::Right;
    const SquareMeas other = left ? SquareMeas::Right : SquareMeas::Left;
    return {{{own, Rational(1, 2)}, {other, Rational(1, 4)}, {SquareMeas::None, Rational(1, 4)}}};
}

}  // namespace detail

/// The full joint over configurations, channels, and occlusion effects.
inline std::vector<FourSquareEntry> enumerate_joint(FourSquareMode mode) {
    std::vector<FourSquareEntry> table;
    for (int bottom = 0; bottom < 2; ++bottom) {
        const bool bottom_left = bottom == 0;
        for (int top_state = 0; top_state < 3; ++top_state) {
            const Rational p_config =
                Rational(1, 2) * (top_state == 0 ? Rational(1, 2) : Rational(1, 4));
            const bool top_left = top_state == 1;
            const bool aligned = top_state != 0 && top_left == bottom_left;

            std::vector<detail::MeasOption> top_options;
            if (top_state == 0 || (mode == FourSquareMode::ObjectWise && aligned)) {
                // Absent, or parked behind the bottom object: nothing can
                // come out of the top row.
                top_options.push_back({SquareMeas::None, Rational(1)});
            } else {
                const auto channel = detail::square_channel(top_left);
                top_options.assign(channel.begin(), channel.end());
            }

            for (const auto& bopt : detail::square_channel(bottom_left)) {
                for (const auto& topt : top_options) {
                    Outcome outcome{topt.meas, bopt.meas};
                    if (mode == FourSquareMode::MeasurementWise &&
                        outcome.top != SquareMeas::None && outcome.top == outcome.bottom) {
                        // The visible bottom measurement shadows its column.
                        outcome.top = SquareMeas::None;
                    }
                    table.push_back(
                        {top_state, bottom_left, outcome, p_config * bopt.prob * topt.prob});
                }
            }
        }
    }
    return table;
}

/// Exact conditionals for one visible outcome; throws when the outcome has
/// zero mass under the mode.
inline FourSquarePosterior foursquare_posterior(const Outcome& outcome, FourSquareMode mode) {
    Rational total(0), top_exists(0), top_left(0), bottom_left(0);
    for (const auto& entry : enumerate_joint(mode)) {
        if (!(entry.outcome == outcome)) continue;
        total += entry.probability;
        if (entry.top_state != 0) top_exists += entry.probability;
        if (entry.top_state == 1) top_left += entry.probability;
        if (entry.bottom_left) bottom_left += entry.probability;
    }
    if (total == Rational(0))
        throw ImpossibleOutcomeError("foursquare_posterior: outcome has zero probability");
    if (top_exists == Rational(0))
        throw UndefinedValueError("foursquare_posterior: top position undefined");
    return {top_exists / total, top_left / top_exists, bottom_left / total};
}

struct OutcomeClassification {
    std::vector<Outcome> both;
    std::vector<Outcome> owo_only;
    std::vector<Outcome> mwo_only;
    std::vector<Outcome> neither;
};

inline std::vector<Outcome> all_outcomes() {
    std::vector<Outcome> outcomes;
    for (SquareMeas top : {SquareMeas::None, SquareMeas::Left, SquareMeas::Right})
        for (SquareMeas bottom : {SquareMeas::None, SquareMeas::Left, SquareMeas::Right})
            outcomes.push_back({top, bottom});
    return outcomes;
}

/// Which outcomes each occlusion model can explain at all.
inline OutcomeClassification classify_outcomes() {
    const auto possible = [](const Outcome& outcome, FourSquareMode mode) {
        Rational total(0);
        for (const auto& entry : enumerate_joint(mode))
            if (entry.outcome == outcome) total += entry.probability;
        return total > Rational(0);
    };
    OutcomeClassification split;
    for (const Outcome& outcome : all_outcomes()) {
        const bool owo = possible(outcome, FourSquareMode::ObjectWise);
        const bool mwo = possible(outcome, FourSquareMode::MeasurementWise);
        (owo && mwo ? split.both : owo ? split.owo_only : mwo ? split.mwo_only : split.neither)
            .push_back(outcome);
    }
    return split;
}

inline std::string to_string(SquareMeas m) {
    return m == SquareMeas::None ? "-" : m == SquareMeas::Left ? "L" : "R";
}

inline std::string to_string(const Outcome& outcome) {
    return "top:" + to_string(outcome.top) + " bottom:" + to_string(outcome.bottom);
}

}  // namespace occtrack
