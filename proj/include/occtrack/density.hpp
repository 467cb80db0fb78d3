#pragma once

#include "occtrack/common.hpp"
#include "occtrack/errors.hpp"

#include <functional>
#include <utility>
#include <variant>

namespace occtrack {

// ---- State density representations ----
//
// One contract, three carriers. Gaussian for Kalman tracks, particle clouds
// for the nonlinear/censored updates, discrete supports for toy spaces where
// posteriors can be checked exactly.

struct GaussianDensity {
    VecX mean;
    MatX cov;
};

/// points is dim x N; weights are kept normalized.
struct ParticleDensity {
    MatX points;
    VecX weights;
};

/// support is dim x K; masses are kept normalized.
struct DiscreteDensity {
    MatX support;
    VecX masses;
};

using StateDensity = std::variant<GaussianDensity, ParticleDensity, DiscreteDensity>;

inline void symmetrize(MatX& cov) { cov = 0.5 * (cov + cov.transpose()).eval(); }

inline VecX density_mean(const StateDensity& d) {
    return std::visit(
        [](const auto& v) -> VecX {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, GaussianDensity>) {
                return v.mean;
            } else if constexpr (std::is_same_v<T, ParticleDensity>) {
                return v.points * v.weights;
            } else {
                return v.support * v.masses;
            }
        },
        d);
}

inline Eigen::Index density_dim(const StateDensity& d) {
    return std::visit(
        [](const auto& v) -> Eigen::Index {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, GaussianDensity>) {
                return v.mean.size();
            } else if constexpr (std::is_same_v<T, ParticleDensity>) {
                return v.points.rows();
            } else {
                return v.support.rows();
            }
        },
        d);
}

/// Mean and covariance of any representation (moment match for non-Gaussians).
inline GaussianDensity moments_of(const StateDensity& d) {
    if (const auto* g = std::get_if<GaussianDensity>(&d)) return *g;
    const MatX* pts = nullptr;
    const VecX* w = nullptr;
    if (const auto* p = std::get_if<ParticleDensity>(&d)) {
        pts = &p->points;
        w = &p->weights;
    } else {
        const auto& q = std::get<DiscreteDensity>(d);
        pts = &q.support;
        w = &q.masses;
    }
    const VecX mean = (*pts) * (*w);
    MatX cov = MatX::Zero(pts->rows(), pts->rows());
    for (Eigen::Index k = 0; k < w->size(); ++k) {
        const VecX dx = pts->col(k) - mean;
        cov.noalias() += (*w)(k) * dx * dx.transpose();
    }
    symmetrize(cov);
    return {mean, cov};
}

// ---- Reweighting functions ----

/// Arbitrary nonnegative pointwise weight on states.
struct PointwiseWeight {
    std::function<double(const VecX&)> f;
};

/// scale * N(z; Hx, R). Conjugate against Gaussian priors.
struct GaussianWeight {
    MatX H;
    MatX R;
    VecX z;
    double scale = 1.0;
};

using StateWeight = std::variant<PointwiseWeight, GaussianWeight>;

inline double evaluate_weight(const StateWeight& w, const VecX& x) {
    if (const auto* pw = std::get_if<PointwiseWeight>(&w)) return pw->f(x);
    const auto& gw = std::get<GaussianWeight>(w);
    const VecX innov = gw.z - gw.H * x;
    Eigen::LLT<MatX> llt(gw.R);
    if (llt.info() != Eigen::Success)
        throw DegenerateModelError("GaussianWeight: noise covariance not positive definite");
    const double quad = innov.dot(llt.solve(innov));
    const double logdet = 2.0 * MatX(llt.matrixL()).diagonal().array().log().sum();
    const double dim = static_cast<double>(gw.z.size());
    return gw.scale * std::exp(-0.5 * (quad + logdet + dim * std::log(2.0 * kPi)));
}

/// Symmetric sigma points (2d+1) with all-positive weights; used for
/// expectations of bounded nonlinear functions under a Gaussian.
struct SigmaPoints {
    MatX points;  // dim x (2d+1)
    VecX weights;
};

inline SigmaPoints sigma_points(const GaussianDensity& g) {
    const Eigen::Index d = g.mean.size();
    const double kappa = 1.0;
    const double spread = std::sqrt(static_cast<double>(d) + kappa);
    MatX cov = g.cov;
    symmetrize(cov);
    Eigen::LLT<MatX> llt(cov);
    MatX root;
    if (llt.info() == Eigen::Success) {
        root = llt.matrixL();
    } else {
        // PSD fallback: eigen decomposition with clamped spectrum.
        Eigen::SelfAdjointEigenSolver<MatX> es(cov);
        root = es.eigenvectors() *
               es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    }
    SigmaPoints sp;
    sp.points.resize(d, 2 * d + 1);
    sp.weights.resize(2 * d + 1);
    sp.points.col(0) = g.mean;
    sp.weights(0) = kappa / (static_cast<double>(d) + kappa);
    for (Eigen::Index i = 0; i < d; ++i) {
        sp.points.col(1 + i) = g.mean + spread * root.col(i);
        sp.points.col(1 + d + i) = g.mean - spread * root.col(i);
        sp.weights(1 + i) = sp.weights(1 + d + i) = 0.5 / (static_cast<double>(d) + kappa);
    }
    return sp;
}

struct DensityUpdateResult {
    StateDensity posterior;
    double mass = 0.0;
};

namespace detail {

inline DensityUpdateResult update_weighted_points(const MatX& pts, const VecX& w,
                                                  const StateWeight& weight, bool discrete) {
    VecX reweighted(w.size());
    for (Eigen::Index k = 0; k < w.size(); ++k)
        reweighted(k) = w(k) * evaluate_weight(weight, pts.col(k));
    const double mass = reweighted.sum();
    if (mass <= 0.0)
        throw ZeroSupportError("density_update: weight annihilated the prior support");
    reweighted /= mass;
    if (discrete) return {DiscreteDensity{pts, reweighted}, mass};
    return {ParticleDensity{pts, reweighted}, mass};
}

/// Conjugate product in information form; deliberately a different algebraic
/// route than the gain-form kalman_update so the two can cross-check.
inline DensityUpdateResult update_gaussian_conjugate(const GaussianDensity& prior,
                                                     const GaussianWeight& gw) {
    const MatX S = gw.H * prior.cov * gw.H.transpose() + gw.R;
    Eigen::LLT<MatX> lltS(S);
    if (lltS.info() != Eigen::Success)
        throw DegenerateModelError("density_update: innovation covariance not positive definite");
    const VecX innov = gw.z - gw.H * prior.mean;
    const double quad = innov.dot(lltS.solve(innov));
    const double logdet = 2.0 * MatX(lltS.matrixL()).diagonal().array().log().sum();
    const double dim = static_cast<double>(gw.z.size());
    const double mass =
        gw.scale * std::exp(-0.5 * (quad + logdet + dim * std::log(2.0 * kPi)));
    if (mass <= 0.0)
        throw ZeroSupportError("density_update: measurement infinitely unlikely");

    Eigen::LLT<MatX> lltP(prior.cov);
    Eigen::LLT<MatX> lltR(gw.R);
    if (lltP.info() != Eigen::Success || lltR.info() != Eigen::Success)
        throw DegenerateModelError("density_update: prior or noise covariance singular");
    const Eigen::Index d = prior.mean.size();
    const MatX info = lltP.solve(MatX::Identity(d, d)) + gw.H.transpose() * lltR.solve(gw.H);
    MatX cov = info.llt().solve(MatX::Identity(d, d));
    const VecX mean = cov * (lltP.solve(prior.mean) + gw.H.transpose() * lltR.solve(gw.z));
    symmetrize(cov);
    return {GaussianDensity{mean, cov}, mass};
}

/// Moment-matched sigma-point reweighting for arbitrary bounded weights.
inline DensityUpdateResult update_gaussian_pointwise(const GaussianDensity& prior,
                                                     const PointwiseWeight& pw) {
    const SigmaPoints sp = sigma_points(prior);
    VecX vals(sp.weights.size());
    for (Eigen::Index k = 0; k < sp.weights.size(); ++k)
        vals(k) = sp.weights(k) * pw.f(sp.points.col(k));
    const double mass = vals.sum();
    if (mass <= 0.0)
        throw ZeroSupportError("density_update: weight annihilated the sigma points");
    vals /= mass;
    const VecX mean = sp.points * vals;
    MatX cov = MatX::Zero(prior.mean.size(), prior.mean.size());
    for (Eigen::Index k = 0; k < vals.size(); ++k) {
        const VecX dx = sp.points.col(k) - mean;
        cov.noalias() += vals(k) * dx * dx.transpose();
    }
    symmetrize(cov);
    return {GaussianDensity{mean, cov}, mass};
}

}  // namespace detail

/// Bayes reweighting: posterior ∝ weight * prior, mass = ∫ weight dPrior.
/// Exact for discrete and particle carriers and for the Gaussian-conjugate
/// pair; Gaussian priors against arbitrary pointwise weights use sigma-point
/// moment matching.
inline DensityUpdateResult density_update(const StateDensity& prior, const StateWeight& weight) {
    if (const auto* g = std::get_if<GaussianDensity>(&prior)) {
        if (const auto* gw = std::get_if<GaussianWeight>(&weight))
            return detail::update_gaussian_conjugate(*g, *gw);
        return detail::update_gaussian_pointwise(*g, std::get<PointwiseWeight>(weight));
    }
    if (const auto* p = std::get_if<ParticleDensity>(&prior))
        return detail::update_weighted_points(p->points, p->weights, weight, false);
    const auto& q = std::get<DiscreteDensity>(prior);
    return detail::update_weighted_points(q.support, q.masses, weight, true);
}

struct KalmanResult {
    GaussianDensity posterior;
    double likelihood = 0.0;  // predictive density value of z
};

struct LinearGaussianObs {
    MatX H;
    MatX R;
};

/// Conjugate update in gain form. Throws DegenerateModelError when the
/// innovation covariance cannot be factored.
inline KalmanResult kalman_update(const GaussianDensity& prior, const LinearGaussianObs& obs,
                                  const VecX& z) {
    const MatX S = obs.H * prior.cov * obs.H.transpose() + obs.R;
    Eigen::LLT<MatX> llt(S);
    if (llt.info() != Eigen::Success)
        throw DegenerateModelError("kalman_update: innovation covariance not positive definite");
    const VecX innov = z - obs.H * prior.mean;
    const MatX K = prior.cov * obs.H.transpose() * llt.solve(MatX::Identity(S.rows(), S.cols()));
    KalmanResult out;
    out.posterior.mean = prior.mean + K * innov;
    out.posterior.cov = prior.cov - K * obs.H * prior.cov;
    symmetrize(out.posterior.cov);
    const double quad = innov.dot(llt.solve(innov));
    const double logdet = 2.0 * MatX(llt.matrixL()).diagonal().array().log().sum();
    out.likelihood =
        std::exp(-0.5 * (quad + logdet + static_cast<double>(z.size()) * std::log(2.0 * kPi)));
    return out;
}

// ---- Particle maintenance ----

inline double effective_sample_size(const ParticleDensity& p) {
    const double s2 = p.weights.squaredNorm();
    return s2 > 0.0 ? 1.0 / s2 : 0.0;
}

inline ParticleDensity systematic_resample(const ParticleDensity& p, Rng& rng,
                                           Eigen::Index count = -1) {
    const Eigen::Index n = count > 0 ? count : p.weights.size();
    ParticleDensity out;
    out.points.resize(p.points.rows(), n);
    out.weights = VecX::Constant(n, 1.0 / static_cast<double>(n));
    const double step = 1.0 / static_cast<double>(n);
    double u = uniform01(rng) * step;
    double cum = p.weights(0);
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
        while (u > cum && k + 1 < p.weights.size()) cum += p.weights(++k);
        out.points.col(i) = p.points.col(k);
        u += step;
    }
    return out;
}

/// Resample in place when the ESS drops below half the particle count.
inline void resample_if_degenerate(ParticleDensity& p, Rng& rng) {
    if (effective_sample_size(p) < 0.5 * static_cast<double>(p.weights.size()))
        p = systematic_resample(p, rng);
}

}  // namespace occtrack
