/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/geometry.hpp
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "ttp/error.hpp"

#include "Eigen/Core"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace ttp {

using Vertices = Eigen::Matrix3Xd; ///< One column per vertex.
using Points2 = Eigen::Matrix2Xd;  ///< One column per image point.
using Weights = Eigen::VectorXd;

/**
 * Scaled-orthographic camera. Image points are obtained as
 * u = scale * (R X)_xy + translation, i.e. the translation is stored directly
 * in image units (the depth component of a 3D translation is not observable).
 */
struct WeakPerspectiveCamera
{
    double scale = 1.0;
    Eigen::Vector2d translation = Eigen::Vector2d::Zero();
};

inline Eigen::Matrix3d skew(const Eigen::Vector3d& w)
{
    Eigen::Matrix3d m;
    m << 0.0, -w.z(), w.y(),
         w.z(), 0.0, -w.x(),
         -w.y(), w.x(), 0.0;
    return m;
}

namespace detail {

// R = I + a K + b K^2 with K = [r]_x. The remaining members are the scaled
// derivatives needed for first and second derivatives of R:
//   alpha = a'/theta, beta = b'/theta, alpha2 = alpha'/theta, beta2 = beta'/theta.
struct RodriguesCoefficients
{
    double a, b, alpha, beta, alpha2, beta2;
};

inline RodriguesCoefficients rodrigues_coefficients(double theta)
{
    RodriguesCoefficients k{};
    if (theta < 0.2) {
        // Power series; all six functions are even in theta. The alpha/beta
        // terms start at n = 1 and the alpha2/beta2 terms at n = 2.
        const double t2 = theta * theta;
        double p0 = 1.0;   // t2^n
        double p1 = 1.0;   // t2^(n-1)
        double p2 = 1.0;   // t2^(n-2)
        double fact = 1.0;  // (2n+1)!
        double fact2 = 2.0; // (2n+2)!
        for (int n = 0; n < 9; ++n) {
            const double sign = (n % 2 == 0) ? 1.0 : -1.0;
            const double twon = 2.0 * n;
            k.a += sign * p0 / fact;
            k.b += sign * p0 / fact2;
            if (n >= 1) {
                k.alpha += sign * twon * p1 / fact;
                k.beta += sign * twon * p1 / fact2;
                p1 *= t2;
            }
            if (n >= 2) {
                k.alpha2 += sign * twon * (twon - 2.0) * p2 / fact;
                k.beta2 += sign * twon * (twon - 2.0) * p2 / fact2;
                p2 *= t2;
            }
            p0 *= t2;
            fact *= (twon + 2.0) * (twon + 3.0);
            fact2 *= (twon + 3.0) * (twon + 4.0);
        }
        return k;
    }
    const double s = std::sin(theta);
    const double c = std::cos(theta);
    const double t2 = theta * theta;
    const double t3 = t2 * theta;
    const double t4 = t2 * t2;
    const double t5 = t4 * theta;
    const double t6 = t3 * t3;
    k.a = s / theta;
    k.b = (1.0 - c) / t2;
    k.alpha = (theta * c - s) / t3;
    k.beta = (theta * s - 2.0 * (1.0 - c)) / t4;
    k.alpha2 = (-t2 * s - 3.0 * theta * c + 3.0 * s) / t5;
    k.beta2 = (theta * c - s) / t5 - 4.0 * (theta * s - 2.0 + 2.0 * c) / t6;
    return k;
}

} // namespace detail

/// Rodrigues' formula. Exactly the identity for r = 0.
inline Eigen::Matrix3d exp_map(const Eigen::Vector3d& r)
{
    const double theta = r.norm();
    const auto k = detail::rodrigues_coefficients(theta);
    const Eigen::Matrix3d K = skew(r);
    return Eigen::Matrix3d::Identity() + k.a * K + k.b * (K * K);
}

/// Partial derivatives dR/dr_k, k = 0..2.
inline std::array<Eigen::Matrix3d, 3> exp_map_jacobian(const Eigen::Vector3d& r)
{
    const double theta = r.norm();
    const auto k = detail::rodrigues_coefficients(theta);
    const Eigen::Matrix3d K = skew(r);
    const Eigen::Matrix3d K2 = K * K;
    std::array<Eigen::Matrix3d, 3> d;
    for (int i = 0; i < 3; ++i) {
        const Eigen::Matrix3d E = skew(Eigen::Vector3d::Unit(i));
        d[i] = k.alpha * r(i) * K + k.a * E + k.beta * r(i) * K2 + k.b * (E * K + K * E);
    }
    return d;
}

/// Second partial derivatives d2R/(dr_k dr_l), symmetric in (k, l).
inline std::array<std::array<Eigen::Matrix3d, 3>, 3> exp_map_hessian(const Eigen::Vector3d& r)
{
    const double theta = r.norm();
    const auto k = detail::rodrigues_coefficients(theta);
    const Eigen::Matrix3d K = skew(r);
    const Eigen::Matrix3d K2 = K * K;
    std::array<Eigen::Matrix3d, 3> E;
    std::array<Eigen::Matrix3d, 3> EK; // E_k K + K E_k
    for (int i = 0; i < 3; ++i) {
        E[i] = skew(Eigen::Vector3d::Unit(i));
        EK[i] = E[i] * K + K * E[i];
    }
    std::array<std::array<Eigen::Matrix3d, 3>, 3> h;
    for (int i = 0; i < 3; ++i) {
        for (int j = i; j < 3; ++j) {
            const double delta = (i == j) ? 1.0 : 0.0;
            const double rr = r(i) * r(j);
            h[i][j] = k.alpha2 * rr * K + k.alpha * (delta * K + r(i) * E[j] + r(j) * E[i])
                      + k.beta2 * rr * K2 + k.beta * (delta * K2 + r(i) * EK[j] + r(j) * EK[i])
                      + k.b * (E[i] * E[j] + E[j] * E[i]);
            h[j][i] = h[i][j];
        }
    }
    return h;
}

/// Maps r to the equivalent rotation vector with norm <= pi.
inline Eigen::Vector3d wrap_rotation(const Eigen::Vector3d& r)
{
    const double theta = r.norm();
    if (theta <= std::numbers::pi) {
        return r;
    }
    const double wrapped = std::remainder(theta, 2.0 * std::numbers::pi); // in [-pi, pi]
    return r * (wrapped / theta);
}

/// Angle of R1^T R2 in radians, in [0, pi].
inline double geodesic_distance(const Eigen::Matrix3d& R1, const Eigen::Matrix3d& R2)
{
    const double cos_angle = ((R1.transpose() * R2).trace() - 1.0) / 2.0;
    return std::acos(std::clamp(cos_angle, -1.0, 1.0));
}

/// u_i = s (R V_i)_xy + t for every column of V.
inline Points2 project(const WeakPerspectiveCamera& camera, const Eigen::Matrix3d& R, const Vertices& V)
{
    Points2 u = camera.scale * (R.topRows<2>() * V);
    u.colwise() += camera.translation;
    return u;
}

enum class ScaleWeighting
{
    visibility, ///< weight each point by its visibility
    uniform     ///< every point counts, visibility ignored
};

struct ScaleOptions
{
    ScaleWeighting weighting = ScaleWeighting::visibility;
};

namespace detail {

inline Weights scale_weights(const Points2& u, const Weights& v, const ScaleOptions& options)
{
    if (options.weighting == ScaleWeighting::uniform) {
        return Weights::Ones(u.cols());
    }
    if (v.size() != u.cols()) {
        throw DimensionMismatch("estimate_scale: visibility has " + std::to_string(v.size())
                                + " entries for " + std::to_string(u.cols()) + " points");
    }
    return v;
}

} // namespace detail

/**
 * Camera scale from the spread of the observed points: the weighted
 * per-coordinate standard deviation of u about its weighted centroid,
 * sqrt(sum_i w_i |u_i - mean|^2 / (2 sum_i w_i)).
 *
 * Against a template normalised to unit per-coordinate RMS radius this gives
 * s = 1 for an orthographic view of that template.
 */
inline double estimate_scale(const Points2& u, const Weights& v, const ScaleOptions& options = {})
{
    const Weights w = detail::scale_weights(u, v, options);
    const auto support = options.weighting == ScaleWeighting::uniform ? w.size() : (w.array() > 0.5).count();
    if (support < 3) {
        throw DegenerateObservation("estimate_scale: fewer than 3 weighted points");
    }
    const double total = w.sum();
    const Eigen::Vector2d centroid = (u * w) / total;
    const double spread = ((u.colwise() - centroid).colwise().squaredNorm().transpose().array() * w.array()).sum();
    // Identical points leave only centroid round-off, ~1e-32 |mean|^2 per point.
    if (!(spread > 1e-24 * total * (1.0 + centroid.squaredNorm()))) {
        throw DegenerateObservation("estimate_scale: observed points have zero spread");
    }
    return std::sqrt(spread / (2.0 * total));
}

/// Derivatives of estimate_scale with respect to the points (2xN) and the visibility (N).
struct ScaleGradient
{
    Points2 d_points;
    Weights d_visibility;
};

inline ScaleGradient estimate_scale_gradient(const Points2& u, const Weights& v, const ScaleOptions& options = {})
{
    const double s = estimate_scale(u, v, options);
    const Weights w = detail::scale_weights(u, v, options);
    const double total = w.sum();
    const Eigen::Vector2d centroid = (u * w) / total;
    const Points2 centered = u.colwise() - centroid;
    ScaleGradient g;
    // The centroid terms cancel because sum_i w_i (u_i - mean) = 0.
    g.d_points = centered * (w / (2.0 * total * s)).asDiagonal();
    if (options.weighting == ScaleWeighting::uniform) {
        g.d_visibility = Weights::Zero(u.cols());
    } else {
        const Eigen::ArrayXd sq = centered.colwise().squaredNorm().transpose().array();
        g.d_visibility = ((sq - 2.0 * s * s) / (4.0 * total * s)).matrix();
    }
    return g;
}

} // namespace ttp
