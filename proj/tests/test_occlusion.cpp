#include "occtrack/association.hpp"
#include "occtrack/occlusion.hpp"

#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <utility>
#include <vector>

namespace occtrack {
namespace {

VecX vec1(double a) {
    VecX v(1);
    v << a;
    return v;
}

VecX vec2(double a, double b) {
    VecX v(2);
    v << a, b;
    return v;
}

VecX vec3(double a, double b, double c) {
    VecX v(3);
    v << a, b, c;
    return v;
}

VecX vec4(double a, double b, double c, double d) {
    VecX v(4);
    v << a, b, c, d;
    return v;
}

// ---- Angular-interval kernel ----

const std::vector<double> kLanes{4.0, 8.0};

TEST(AngularIntervalKernel, OnlyNearerLanesOcclude) {
    const auto kernel = angular_interval_kernel(kLanes);
    // Occluder in the same lane or a farther lane never blocks the view.
    EXPECT_EQ(kernel.occlusion(vec3(0, 4, 4), vec3(0, 4, 4)), 0.0);
    EXPECT_EQ(kernel.occlusion(vec3(0, 4, 4), vec3(1, 4, 4)), 0.0);
    EXPECT_GT(kernel.occlusion(vec3(1, 4, 4), vec3(0, 2, 2)), 0.0);
}

TEST(AngularIntervalKernel, ProjectiveShadowCoversExactly) {
    const auto kernel = angular_interval_kernel(kLanes);
    // The occluder's span scaled toward the sensor by the lane-depth ratio
    // casts a shadow that matches the target span endpoint for endpoint.
    EXPECT_NEAR(kernel.occlusion(vec3(1, 4, 4), vec3(0, 2, 2)), 1.0, 1e-12);
}

TEST(AngularIntervalKernel, HandComputedPartialCoverage) {
    const auto kernel = angular_interval_kernel(kLanes);
    // Target x in [4,8] at y=8, occluder x in [3,4] at y=4. Corner rays give
    // angular spans [atan2(1,1), atan2(2,1)] and [atan2(1,1), atan2(4,3)].
    const double expected = (std::atan2(4.0, 3.0) - std::atan2(1.0, 1.0)) /
                            (std::atan2(2.0, 1.0) - std::atan2(1.0, 1.0));
    EXPECT_NEAR(expected, 0.4410157268268091, 1e-12);
    EXPECT_NEAR(kernel.occlusion(vec3(1, 4, 4), vec3(0, 3, 1)), expected, 1e-12);
}

TEST(AngularIntervalKernel, DegenerateTargetGivesZero) {
    const auto kernel = angular_interval_kernel(kLanes);
    EXPECT_EQ(kernel.occlusion(vec3(1, 4, 0), vec3(0, 1, 3)), 0.0);
}

// ---- Box-overlap kernel ----

TEST(BoxOverlapKernel, RequiresStrictlyLowerBottom) {
    const auto kernel = box_overlap_kernel();
    // Identical box: bottoms tie, so no occlusion; nudged down, full overlap.
    EXPECT_EQ(kernel.occlusion(vec4(0, 0, 2, 2), vec4(0, 0, 2, 2)), 0.0);
    EXPECT_EQ(kernel.occlusion(vec4(0, 0, 2, 2), vec4(0, -0.5, 2, 2)), 0.0);
    EXPECT_DOUBLE_EQ(kernel.occlusion(vec4(0, 0, 2, 2), vec4(0, 0.001, 2, 2)), 1.0);
}

TEST(BoxOverlapKernel, HalfOverlapSaturatesTheRamp) {
    const auto kernel = box_overlap_kernel(0.5);
    // Intersection 1 x 2 over target area 4: exactly the ramp threshold.
    EXPECT_DOUBLE_EQ(kernel.occlusion(vec4(0, 0, 2, 2), vec4(1, 0, 2, 2.2)), 1.0);
}

TEST(BoxOverlapKernel, QuarterOverlapIsHalfwayUpTheRamp) {
    const auto kernel = box_overlap_kernel(0.5);
    EXPECT_DOUBLE_EQ(kernel.occlusion(vec4(0, 0, 2, 2), vec4(1, 1, 2, 2)), 0.5);
}

TEST(BoxOverlapKernel, ZeroAreaTargetGivesZero) {
    const auto kernel = box_overlap_kernel();
    EXPECT_EQ(kernel.occlusion(vec4(0, 0, 0, 2), vec4(0, 0.5, 2, 2)), 0.0);
}

TEST(BoxOcclusionProb, NoQualifyingOccluderGivesZero) {
    EXPECT_EQ(box_occlusion_prob(vec4(0, 0, 2, 2), {}, 1.0), 0.0);
    EXPECT_EQ(box_occlusion_prob(vec4(0, 0, 2, 2), {vec4(0, -1, 2, 2)}, 1.0), 0.0);
}

TEST(BoxOcclusionProb, ScalesBestOverlapByOccludability) {
    const std::vector<VecX> boxes{vec4(1, 1, 2, 2), vec4(1, 0, 2, 2.2)};
    EXPECT_DOUBLE_EQ(box_occlusion_prob(vec4(0, 0, 2, 2), {boxes[0]}, 0.8), 0.4);
    EXPECT_DOUBLE_EQ(box_occlusion_prob(vec4(0, 0, 2, 2), boxes, 0.8), 0.8);
    EXPECT_DOUBLE_EQ(box_occlusion_prob(vec4(0, 0, 2, 2), boxes, 0.95), 0.95);
}

// ---- Combiners ----

TEST(Combiners, EmptySetGivesZero) {
    EXPECT_EQ(combine_softmax({}, 4.0), 0.0);
    EXPECT_EQ(combine_product({}), 0.0);
}

TEST(Combiners, SingletonIsExact) {
    EXPECT_NEAR(combine_softmax({0.37}, 4.0), 0.37, 1e-12);
    EXPECT_DOUBLE_EQ(combine_product({0.37}), 0.37);
}

TEST(Combiners, MonotoneAndClamped) {
    const double base = combine_softmax({0.3, 0.4}, 4.0);
    EXPECT_GT(combine_softmax({0.35, 0.4}, 4.0), base);
    EXPECT_EQ(combine_softmax({0.9, 0.9, 0.9, 0.9}, 4.0), 1.0);
    EXPECT_LE(combine_product({0.9, 0.9, 0.9, 0.9}), 1.0);
}

TEST(Combiners, TwoHalfCoversMatchSamplingOracle) {
    // Two occluders, each hiding half the target span, sliding uniformly
    // inside it. The oracle averages the union coverage over positions; both
    // combiners must land above the single-occluder value and near the oracle.
    Rng rng(5);
    double oracle = 0.0;
    const int trials = 200000;
    for (int t = 0; t < trials; ++t) {
        const double s1 = uniform(rng, 0.0, 0.5);
        const double s2 = uniform(rng, 0.0, 0.5);
        oracle += 0.5 + std::abs(s1 - s2);
    }
    oracle /= trials;
    EXPECT_NEAR(oracle, 2.0 / 3.0, 2e-3);

    const double soft = combine_softmax({0.5, 0.5}, 4.0);
    const double prod = combine_product({0.5, 0.5});
    EXPECT_GT(soft, 0.5);
    EXPECT_GT(prod, 0.5);
    EXPECT_NEAR(soft, oracle, 0.1);
    EXPECT_NEAR(prod, oracle, 0.1);
}

TEST(ExpvalVisibility, NoOccludersSeeEverything) {
    const BernoulliComponent target{1.0, GaussianDensity{vec2(0, 0), MatX::Identity(2, 2)}, {}};
    const auto kernel = box_overlap_kernel();
    EXPECT_EQ(expval_softmax_visibility(target, {}, kernel, 4.0), 1.0);
}

TEST(ExpvalVisibility, ExistenceScalesTheKernel) {
    const PairwiseKernel always{[](const VecX&, const VecX&) { return 1.0; }};
    const StateDensity d{GaussianDensity{vec1(0), MatX::Identity(1, 1)}};
    const BernoulliComponent target{1.0, d, {}};
    const BernoulliComponent occluder{0.4, d, {}};
    EXPECT_NEAR(expval_softmax_visibility(target, {occluder}, always, 4.0), 0.6, 1e-12);
}

TEST(ExpvalVisibility, OccludersActThroughTheirMeans) {
    const auto kernel = box_overlap_kernel(0.5);
    const BernoulliComponent target{1.0, GaussianDensity{vec4(0, 0, 2, 2), MatX::Identity(4, 4)},
                                    {}};
    const BernoulliComponent occluder{
        0.7, GaussianDensity{vec4(1, 0, 2, 2.2), 5.0 * MatX::Identity(4, 4)}, {}};
    const double vis = expval_softmax_visibility(target, {occluder}, kernel, 4.0);
    // Spread is ignored: only the mean box and the existence enter.
    EXPECT_DOUBLE_EQ(
        vis, 1.0 - expval_occlusion(vec4(0, 0, 2, 2), {{vec4(1, 0, 2, 2.2), 0.7}}, kernel, 4.0));
    EXPECT_NEAR(vis, 0.3, 1e-12);
}

// ---- Visibility grid ----

StateDensity span_point(double lo, double len) {
    DiscreteDensity d;
    d.support = MatX(2, 1);
    d.support << lo, len;
    d.masses = VecX::Ones(1);
    return d;
}

const SpanFn kSpan = [](const VecX& x) { return std::pair<double, double>{x(0), x(0) + x(1)}; };

TEST(VisibilityGridTests, StartsClearAndStaysClearWithoutOccluders) {
    const auto g = grid_visibility_update(uniform_grid(0.0, 10.0, 10), {}, kSpan);
    EXPECT_EQ(g.vis.minCoeff(), 1.0);
    EXPECT_EQ(grid_max_visibility(g, 2.0, 3.0), 1.0);
}

TEST(VisibilityGridTests, DeterministicOccluderZeroesItsCells) {
    const auto g =
        grid_visibility_update(uniform_grid(0.0, 10.0, 10), {{span_point(2.0, 3.0), 1.0}}, kSpan);
    for (int c = 0; c < 10; ++c) {
        const double expected = (c >= 2 && c <= 4) ? 0.0 : 1.0;
        EXPECT_EQ(g.vis(c), expected) << "cell " << c;
    }
    EXPECT_EQ(grid_max_visibility(g, 3.2, 3.8), 0.0);
    EXPECT_EQ(grid_max_visibility(g, 0.2, 1.4), 1.0);
    EXPECT_EQ(grid_max_visibility(g, 4.3, 6.2), 1.0);
}

TEST(VisibilityGridTests, ExistenceThinsInsteadOfZeroing) {
    const auto g =
        grid_visibility_update(uniform_grid(0.0, 10.0, 10), {{span_point(2.0, 3.0), 0.7}}, kSpan);
    EXPECT_NEAR(g.vis(3), 0.3, 1e-12);
    EXPECT_EQ(g.vis(7), 1.0);

    const auto g2 = grid_visibility_update(
        uniform_grid(0.0, 10.0, 10), {{span_point(2.0, 3.0), 0.5}, {span_point(3.0, 1.0), 0.5}},
        kSpan);
    EXPECT_NEAR(g2.vis(3), 0.25, 1e-12);
}

TEST(VisibilityGridTests, SpansOutsideTheGridCountAsClear) {
    auto g = uniform_grid(0.0, 10.0, 10);
    g.vis.setZero();
    EXPECT_EQ(grid_max_visibility(g, -2.0, -1.0), 1.0);
    EXPECT_EQ(grid_max_visibility(g, 9.0, 11.0), 1.0);
    EXPECT_EQ(grid_max_visibility(g, 4.0, 5.0), 0.0);
}

/// Longest stretch of [lo, hi] not covered by the union of the intervals.
double longest_gap(double lo, double hi, std::vector<std::pair<double, double>> iv) {
    std::sort(iv.begin(), iv.end());
    double best = 0.0;
    double at = lo;
    for (const auto& [a, b] : iv) {
        if (a > at) best = std::max(best, std::min(a, hi) - at);
        at = std::max(at, b);
        if (at >= hi) break;
    }
    best = std::max(best, hi - at);
    return std::max(best, 0.0);
}

TEST(VisibilityGridTests, RandomScenesMatchExactGeometryUpToOneCell) {
    Rng rng(71);
    const int cells = 40;
    const double width = 10.0 / cells;
    int decided = 0;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::pair<double, double>> spans;
        std::vector<std::pair<StateDensity, double>> occluders;
        for (int k = 0; k < 2; ++k) {
            const double lo = uniform(rng, 0.0, 8.0);
            const double len = uniform(rng, 0.5, 3.0);
            spans.push_back({lo, lo + len});
            occluders.push_back({span_point(lo, len), 1.0});
        }
        const double tlo = uniform(rng, 0.0, 8.0);
        const double thi = tlo + uniform(rng, 0.5, 2.0);

        const auto g = grid_visibility_update(uniform_grid(0.0, 10.0, cells), occluders, kSpan);
        const double grid_vis = grid_max_visibility(g, tlo, thi);

        // Decide only scenes whose geometry is clear of the discretization:
        // an uncovered stretch of at least two cells must read visible, and a
        // cover extending one cell past both ends must read hidden.
        if (longest_gap(tlo, thi, spans) >= 2.0 * width) {
            EXPECT_EQ(grid_vis, 1.0) << "trial " << trial;
            ++decided;
        } else if (longest_gap(tlo - width, thi + width, spans) == 0.0) {
            EXPECT_EQ(grid_vis, 0.0) << "trial " << trial;
            ++decided;
        }
    }
    EXPECT_GT(decided, 140);
}

// ---- Measurement-wise terms on a three-cell world ----

using Cell = int;

double cell_likelihood(const VecX& x, Cell z) {
    return static_cast<Cell>(std::lround(x(0))) == z ? 0.7 : 0.15;
}

MeasurementModel<Cell> cell_model(double pd, double kappa = 0.0) {
    MeasurementModel<Cell> model;
    model.detection = [pd](const VecX&) { return pd; };
    model.constant_detection = pd;
    model.likelihood = cell_likelihood;
    model.clutter_rate = kappa;
    model.clutter_density = [](Cell z) { return z == 0 ? 0.5 : z == 1 ? 0.3 : 0.2; };
    model.measurement_support = {0, 1, 2};
    return model;
}

StateDensity cell_density(double p0, double p1, double p2) {
    DiscreteDensity d;
    d.support = MatX(1, 3);
    d.support << 0, 1, 2;
    d.masses = vec3(p0, p1, p2);
    return d;
}

/// Each visible measurement shadows its own cell hard and neighbours softly.
double cell_shadow(Cell z, Cell v) {
    const int gap = std::abs(z - v);
    return gap == 0 ? 0.3 : gap == 1 ? 0.7 : 1.0;
}

double cell_visibility(Cell z, const std::vector<Cell>& visible) {
    double vis = 1.0;
    for (Cell v : visible) vis *= cell_shadow(z, v);
    return vis;
}

MeasurementWise<Cell> cell_mwo() {
    MeasurementWise<Cell> strategy;
    strategy.meas_visibility = cell_visibility;
    return strategy;
}

TEST(MwoAugmentedMiss, FullVisibilityReducesToPlainMiss) {
    MeasurementWise<Cell> clear;
    clear.meas_visibility = [](Cell, const std::vector<Cell>&) { return 1.0; };
    const BernoulliComponent comp{0.9, cell_density(0.5, 0.3, 0.2), {}};
    const auto miss = mwo_augmented_miss(comp, cell_model(0.9), {1}, clear);
    for (int c = 0; c < 3; ++c) EXPECT_EQ(miss(vec1(c)), 1.0 - 0.9);
}

TEST(MwoAugmentedMiss, BlindSensorAlwaysMisses) {
    MeasurementWise<Cell> blind;
    blind.meas_visibility = [](Cell, const std::vector<Cell>&) { return 0.0; };
    const BernoulliComponent comp{0.9, cell_density(0.5, 0.3, 0.2), {}};
    const auto miss = mwo_augmented_miss(comp, cell_model(0.9), {1}, blind);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(miss(vec1(c)), 1.0, 1e-12);
}

TEST(MwoAugmentedMiss, DiscreteSupportSumsExactly) {
    MeasurementWise<Cell> strategy;
    strategy.meas_visibility = [](Cell z, const std::vector<Cell>&) {
        return z == 0 ? 0.4 : z == 1 ? 1.0 : 0.8;
    };
    const BernoulliComponent comp{0.9, cell_density(0.5, 0.3, 0.2), {}};
    const auto miss = mwo_augmented_miss(comp, cell_model(0.9), {1}, strategy);
    // At x=0: hidden mass 0.7*0.6 + 0.15*0 + 0.15*0.2 = 0.45.
    EXPECT_NEAR(miss(vec1(0)), 0.1 + 0.9 * 0.45, 1e-12);
    EXPECT_NEAR(miss(vec1(1)), 0.1 + 0.9 * (0.15 * 0.6 + 0.15 * 0.2), 1e-12);
}

TEST(MwoAugmentedMiss, StaysBetweenMissAndOne) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const double pd = uniform01(rng);
        std::array<double, 3> vis{};
        for (auto& v : vis) v = uniform01(rng);
        MeasurementWise<Cell> strategy;
        strategy.meas_visibility = [vis](Cell z, const std::vector<Cell>&) {
            return vis[static_cast<std::size_t>(z)];
        };
        const double occ = trial % 2 == 0 ? 1.0 : uniform01(rng);
        const BernoulliComponent comp{0.8, cell_density(0.2, 0.5, 0.3), occ};
        const auto miss = mwo_augmented_miss(comp, cell_model(pd), {0, 2}, strategy);
        for (int c = 0; c < 3; ++c) {
            const double m = miss(vec1(c));
            EXPECT_GE(m, 1.0 - pd);
            EXPECT_LE(m, 1.0 + 1e-15);
        }
    }
}

TEST(MwoAugmentedMiss, OccludabilityGatesTheAddition) {
    const auto strategy = cell_mwo();
    const auto model = cell_model(0.9);
    const std::vector<Cell> Z{0};
    const BernoulliComponent opaque{0.9, cell_density(1, 0, 0), 0.0};
    EXPECT_EQ(mwo_augmented_miss(opaque, model, Z, strategy)(vec1(0)), 1.0 - 0.9);

    const BernoulliComponent half{0.9, cell_density(1, 0, 0), 0.5};
    const BernoulliComponent full{0.9, cell_density(1, 0, 0), {}};
    const double base = 1.0 - 0.9;
    const double add_full = mwo_augmented_miss(full, model, Z, strategy)(vec1(0)) - base;
    const double add_half = mwo_augmented_miss(half, model, Z, strategy)(vec1(0)) - base;
    EXPECT_NEAR(add_half, 0.5 * add_full, 1e-12);
}

TEST(OccludedMeasProb, SigmaPointsIntegrateQuadraticsExactly) {
    MeasurementModel<VecX> model;
    model.detection = [](const VecX&) { return 0.9; };
    model.constant_detection = 0.9;
    model.likelihood = nullptr;
    model.linear_obs = LinearGaussianObs{MatX::Identity(1, 1), 0.25 * MatX::Identity(1, 1)};
    MeasurementWise<VecX> strategy;
    strategy.meas_visibility = [](const VecX& z, const std::vector<VecX>&) {
        return 0.1 + 0.04 * z(0) + 0.01 * z(0) * z(0);
    };
    // E[vis] = 0.1 + 0.04 mu + 0.01 (mu^2 + sigma^2) at mu=2, sigma^2=0.25.
    const double expected = 1.0 - (0.1 + 0.04 * 2.0 + 0.01 * (4.0 + 0.25));
    EXPECT_NEAR(occluded_meas_prob(model, strategy, vec1(2.0), {}), expected, 1e-12);
}

TEST(OccludedMeasProb, SigmaPointsTrackSmoothVisibility) {
    MeasurementModel<VecX> model;
    model.detection = [](const VecX&) { return 0.9; };
    model.constant_detection = 0.9;
    model.linear_obs = LinearGaussianObs{MatX::Identity(1, 1), 0.25 * MatX::Identity(1, 1)};
    const auto vis = [](double z) { return 1.0 / (1.0 + std::exp(-2.0 * (z - 1.0))); };
    MeasurementWise<VecX> strategy;
    strategy.meas_visibility = [vis](const VecX& z, const std::vector<VecX>&) { return vis(z(0)); };

    const double mu = 1.2, sigma = 0.5;
    double quad = 0.0;
    const int steps = 40001;
    const double lo = mu - 8.0 * sigma, hi = mu + 8.0 * sigma;
    const double h = (hi - lo) / steps;
    for (int k = 0; k < steps; ++k) {
        const double z = lo + (k + 0.5) * h;
        quad += h * normal_pdf(z, mu, sigma) * (1.0 - vis(z));
    }
    EXPECT_NEAR(occluded_meas_prob(model, strategy, vec1(mu), {}), quad, 0.02);
}

TEST(OccludedClutterFactor, TrivialCasesGiveOne) {
    const auto vis_one = [](Cell, const std::vector<Cell>&) { return 1.0; };
    const auto pf = [](Cell) { return 1.0 / 3.0; };
    EXPECT_EQ(occluded_clutter_factor<Cell>(0.0, pf, {0}, cell_visibility, nullptr, {0, 1, 2}),
              1.0);
    EXPECT_EQ(occluded_clutter_factor<Cell>(2.0, pf, {0}, vis_one, nullptr, {0, 1, 2}), 1.0);
}

TEST(OccludedClutterFactor, HalfOccludedUniformMatchesQuadrature) {
    // Clutter uniform on [0,10]; everything left of 5 is hidden; kappa=2
    // makes the exponent exactly 1.
    const auto pf = [](const double& z) { return z >= 0.0 && z <= 10.0 ? 0.1 : 0.0; };
    const auto vis = [](const double& z, const std::vector<double>&) {
        return z < 5.0 ? 0.0 : 1.0;
    };
    const auto integrate = [&](const std::function<double(const double&)>& g) {
        double acc = 0.0;
        const int steps = 20000;
        const double h = 10.0 / steps;
        for (int k = 0; k < steps; ++k) {
            const double z = (k + 0.5) * h;
            acc += h * pf(z) * g(z);
        }
        return acc;
    };
    const double factor = occluded_clutter_factor<double>(2.0, pf, {}, vis, integrate);
    EXPECT_NEAR(factor, std::exp(1.0), 1e-6);
}

TEST(OccludedClutterFactor, DiscreteSupportSumsExactly) {
    const auto model = cell_model(0.9, 0.6);
    const std::vector<Cell> Z{0, 2};
    double exponent = 0.0;
    for (Cell c : {0, 1, 2})
        exponent += 0.6 * model.clutter_density(c) * (1.0 - cell_visibility(c, Z));
    EXPECT_NEAR(occluded_clutter_factor<Cell>(0.6, model.clutter_density, Z, cell_visibility,
                                              nullptr, {0, 1, 2}),
                std::exp(exponent), 1e-12);
    EXPECT_NEAR(exponent, 0.3858, 1e-12);
}

TEST(StaticDetectionFolding, MultipliesDetectionByVisibility) {
    const auto pd = [](const VecX& x) { return 0.5 + 0.1 * x(0); };
    const auto clear = static_owo_detection(pd, [](const VecX&) { return 1.0; });
    const auto dark = static_owo_detection(pd, [](const VecX&) { return 0.0; });
    const auto half = static_owo_detection(pd, [](const VecX& x) { return 0.5 + 0.05 * x(0); });
    for (double x : {0.0, 1.0, 2.0}) {
        EXPECT_EQ(clear(vec1(x)), pd(vec1(x)));
        EXPECT_EQ(dark(vec1(x)), 0.0);
        EXPECT_DOUBLE_EQ(half(vec1(x)), (0.5 + 0.1 * x) * (0.5 + 0.05 * x));
    }
}

// ---- Restricted-occlusion marginalization on the toy world ----

struct ToyObject {
    double existence = 0.0;
    std::array<double, 3> prior{};
};

struct ToyPosterior {
    double evidence = 0.0;
    std::vector<double> existence;
    std::vector<std::array<double, 3>> state;
};

/// Brute-force the restricted-occlusion joint: every object is nonexistent,
/// missed, detected into one of the observed measurements, or detected into
/// an explicit latent occluded cell; occluded clutter is an explicit
/// per-cell count enumeration instead of its closed-form exponential.
ToyPosterior enumerate_restricted(const std::vector<ToyObject>& objects, double pd, double kappa,
                                  const std::array<double, 3>& pf, const std::vector<Cell>& Z) {
    const int n = static_cast<int>(objects.size());
    const int m = static_cast<int>(Z.size());

    std::array<double, 3> hidden{};
    for (Cell c : {0, 1, 2}) hidden[static_cast<std::size_t>(c)] = 1.0 - cell_visibility(c, Z);

    // Poisson-weighted occluded clutter, cell by cell, truncated far beyond
    // double precision.
    double occluded_clutter = 1.0;
    for (Cell c : {0, 1, 2}) {
        double cell_sum = 0.0;
        double term = 1.0;
        for (int k = 0; k <= 30; ++k) {
            cell_sum += term;
            term *= kappa * pf[static_cast<std::size_t>(c)] * hidden[static_cast<std::size_t>(c)] /
                    (k + 1);
        }
        occluded_clutter *= cell_sum;
    }

    double observed_thinning = 1.0;
    for (int j = 0; j < m; ++j) {
        std::vector<Cell> others;
        for (int j2 = 0; j2 < m; ++j2)
            if (j2 != j) others.push_back(Z[static_cast<std::size_t>(j2)]);
        observed_thinning *= cell_visibility(Z[static_cast<std::size_t>(j)], others);
    }

    ToyPosterior post;
    post.existence.assign(objects.size(), 0.0);
    post.state.assign(objects.size(), {});

    // fate per object: -2 nonexistent, -1 missed, j >= 0 feeds measurement j,
    // 100 + c detected but occluded at latent cell c.
    std::vector<int> fate(objects.size());
    std::vector<int> cell(objects.size());
    const std::function<void(int, double, unsigned)> recurse = [&](int i, double weight,
                                                                   unsigned used) {
        if (i == n) {
            for (int j = 0; j < m; ++j)
                if (!(used & (1u << j))) weight *= kappa * pf[static_cast<std::size_t>(Z[j])];
            post.evidence += weight;
            for (int i2 = 0; i2 < n; ++i2) {
                if (fate[static_cast<std::size_t>(i2)] == -2) continue;
                post.existence[static_cast<std::size_t>(i2)] += weight;
                post.state[static_cast<std::size_t>(i2)]
                          [static_cast<std::size_t>(cell[static_cast<std::size_t>(i2)])] += weight;
            }
            return;
        }
        const auto& obj = objects[static_cast<std::size_t>(i)];
        fate[static_cast<std::size_t>(i)] = -2;
        recurse(i + 1, weight * (1.0 - obj.existence), used);
        for (Cell x = 0; x < 3; ++x) {
            const double at = weight * obj.existence * obj.prior[static_cast<std::size_t>(x)];
            cell[static_cast<std::size_t>(i)] = x;
            fate[static_cast<std::size_t>(i)] = -1;
            recurse(i + 1, at * (1.0 - pd), used);
            for (int j = 0; j < m; ++j) {
                if (used & (1u << j)) continue;
                fate[static_cast<std::size_t>(i)] = j;
                recurse(i + 1, at * pd * cell_likelihood(vec1(x), Z[static_cast<std::size_t>(j)]),
                        used | (1u << j));
            }
            for (Cell zu = 0; zu < 3; ++zu) {
                fate[static_cast<std::size_t>(i)] = 100 + zu;
                recurse(i + 1,
                        at * pd * cell_likelihood(vec1(x), zu) *
                            hidden[static_cast<std::size_t>(zu)],
                        used);
            }
        }
    };
    recurse(0, 1.0, 0u);

    const double global = std::exp(-kappa) * occluded_clutter * observed_thinning;
    post.evidence *= global;
    for (std::size_t i = 0; i < objects.size(); ++i) {
        double norm = 0.0;
        for (double& mass : post.state[i]) norm += mass;
        for (double& mass : post.state[i]) mass = norm > 0.0 ? mass / norm : 0.0;
        post.existence[i] *= global / post.evidence;
    }
    return post;
}

PMBState toy_pmb(const std::vector<ToyObject>& objects) {
    PMBState state;
    state.undetected.rate = 0.0;
    state.undetected.shape = cell_density(1.0 / 3, 1.0 / 3, 1.0 / 3);
    for (std::size_t i = 0; i < objects.size(); ++i) {
        Track track;
        track.label = static_cast<TrackLabel>(i + 1);
        track.components.push_back(
            {1.0,
             BernoulliComponent{objects[i].existence,
                                cell_density(objects[i].prior[0], objects[i].prior[1],
                                             objects[i].prior[2]),
                                {}}});
        state.tracks.push_back(std::move(track));
    }
    state.next_label = static_cast<TrackLabel>(objects.size() + 1);
    return state;
}

TEST(RestrictedOcclusion, AugmentedMissEqualsExplicitOccludedSetSum) {
    const std::vector<ToyObject> objects{{0.8, {0.6, 0.3, 0.1}}, {0.65, {0.2, 0.3, 0.5}}};
    const double pd = 0.9, kappa = 0.6;
    const std::array<double, 3> pf{0.5, 0.3, 0.2};
    const std::vector<Cell> Z{0, 2};

    const auto oracle = enumerate_restricted(objects, pd, kappa, pf, Z);

    const auto prior = toy_pmb(objects);
    const auto problem =
        build_problem(prior, Z, cell_model(pd, kappa), OcclusionStrategy<Cell>{cell_mwo()});
    const auto marginals = exact_marginals(problem);

    double observed_thinning = 1.0;
    observed_thinning *= cell_visibility(0, {2});
    observed_thinning *= cell_visibility(2, {0});
    const double evidence = std::exp(marginals.log_evidence) * observed_thinning;
    EXPECT_NEAR(evidence / oracle.evidence, 1.0, 1e-12);

    const auto post = pmb_posterior(prior, marginals, problem);
    ASSERT_EQ(post.tracks.size(), objects.size());
    for (std::size_t i = 0; i < objects.size(); ++i) {
        EXPECT_NEAR(post.tracks[i].existence(), oracle.existence[i], 1e-12);
        const auto density = std::get<DiscreteDensity>(post.tracks[i].merged_density());
        for (int c = 0; c < 3; ++c)
            EXPECT_NEAR(density.masses(c), oracle.state[i][static_cast<std::size_t>(c)], 1e-12);
    }
}

TEST(RestrictedOcclusion, SingleObjectSingleMeasurementAlsoExact) {
    const std::vector<ToyObject> objects{{0.7, {0.1, 0.2, 0.7}}};
    const double pd = 0.6, kappa = 0.3;
    const std::array<double, 3> pf{0.5, 0.3, 0.2};
    const std::vector<Cell> Z{1};

    const auto oracle = enumerate_restricted(objects, pd, kappa, pf, Z);
    const auto prior = toy_pmb(objects);
    const auto problem =
        build_problem(prior, Z, cell_model(pd, kappa), OcclusionStrategy<Cell>{cell_mwo()});
    const auto marginals = exact_marginals(problem);

    const double evidence = std::exp(marginals.log_evidence) * cell_visibility(1, {});
    EXPECT_NEAR(evidence / oracle.evidence, 1.0, 1e-12);

    const auto post = pmb_posterior(prior, marginals, problem);
    EXPECT_NEAR(post.tracks[0].existence(), oracle.existence[0], 1e-12);
}

TEST(RestrictedOcclusion, ClutterFactorNeverTouchesThePosterior) {
    const std::vector<ToyObject> objects{{0.8, {0.6, 0.3, 0.1}}, {0.65, {0.2, 0.3, 0.5}}};
    const double pd = 0.9, kappa = 0.6;
    const std::vector<Cell> Z{0, 2};
    const auto prior = toy_pmb(objects);
    const auto model = cell_model(pd, kappa);

    const auto problem = build_problem(prior, Z, model, OcclusionStrategy<Cell>{cell_mwo()});
    auto stripped = problem;
    stripped.log_evidence_offset = -kappa;

    const auto with_factor = exact_marginals(problem);
    const auto without = exact_marginals(stripped);
    EXPECT_TRUE((with_factor.P.array() == without.P.array()).all());
    EXPECT_TRUE((with_factor.P_miss.array() == without.P_miss.array()).all());
    EXPECT_TRUE((with_factor.P_clutter.array() == without.P_clutter.array()).all());

    const double exponent =
        occluded_clutter_exponent(model, Z, std::function<double(const Cell&, const std::vector<Cell>&)>(cell_visibility));
    EXPECT_DOUBLE_EQ(with_factor.log_evidence - without.log_evidence, exponent);

    const auto post_a = pmb_posterior(prior, with_factor, problem);
    const auto post_b = pmb_posterior(prior, without, stripped);
    ASSERT_EQ(post_a.tracks.size(), post_b.tracks.size());
    for (std::size_t i = 0; i < post_a.tracks.size(); ++i) {
        EXPECT_EQ(post_a.tracks[i].existence(), post_b.tracks[i].existence());
        const auto da = std::get<DiscreteDensity>(post_a.tracks[i].merged_density());
        const auto db = std::get<DiscreteDensity>(post_b.tracks[i].merged_density());
        EXPECT_TRUE((da.masses.array() == db.masses.array()).all());
    }
}

}  // namespace
}  // namespace occtrack
