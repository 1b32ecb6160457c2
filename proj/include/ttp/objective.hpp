/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/objective.hpp
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

#include "ttp/deform.hpp"
#include "ttp/error.hpp"
#include "ttp/geometry.hpp"
#include "ttp/lbfgs.hpp"
#include "ttp/mesh.hpp"

#include "Eigen/Core"

#include <memory>
#include <optional>
#include <string>

namespace ttp {

/// Observed image points u (2xN) and visibility weights v in [0, 1].
struct Observation
{
    Points2 points;
    Weights visibility;
};

/**
 * Everything needed to fit pose and deformation to one observation:
 *   l(r, t, c) = sum_i v_i |u_i - (s (R(r) (T_i + B_i c))_xy + t)|^2 + gamma |c|^2.
 */
struct FitProblem
{
    std::shared_ptr<const TemplateMesh> mesh;
    DeformationBasis basis;
    Observation observation;
    double gamma = 1e-3;
    int iterations = 4; ///< outer alternations
    LbfgsOptions lbfgs;
    ScaleOptions scale_options;
    /// Known camera scale. When empty the scale is estimated once from the observation.
    std::optional<double> scale;
    /// Joint Newton refinement of (r, t, c) after the alternation, to reach a stationary point.
    bool polish = false;
    double polish_tolerance = 1e-9; ///< on |grad| / max(1, |l|)
    int polish_max_steps = 50;

    const Vertices& template_vertices() const { return mesh->vertices(); }
    Eigen::Index vertex_count() const { return mesh ? mesh->size() : 0; }
    Eigen::Index component_count() const { return basis.component_count(); }

    void validate() const
    {
        if (!mesh) {
            throw DimensionMismatch("fit problem has no mesh");
        }
        const auto n = mesh->size();
        if (basis.vertex_count() != n) {
            throw DimensionMismatch("basis has " + std::to_string(basis.vertex_count()) + " vertices, mesh has "
                                    + std::to_string(n));
        }
        if (observation.points.cols() != n || observation.visibility.size() != n) {
            throw DimensionMismatch("observation has " + std::to_string(observation.points.cols()) + " points and "
                                    + std::to_string(observation.visibility.size()) + " visibilities, mesh has "
                                    + std::to_string(n) + " vertices");
        }
        if (!(gamma >= 0.0)) {
            throw Error("gamma must be nonnegative");
        }
        if (iterations < 1) {
            throw Error("iterations must be at least 1");
        }
        if (scale && !(*scale > 0.0)) {
            throw Error("camera scale must be positive");
        }
        if (!observation.points.allFinite() || !observation.visibility.allFinite() || !basis.all_finite()) {
            throw Error("fit problem contains non-finite values");
        }
    }
};

/// Solver unknowns; packed as [r(3), t(2), c(K)].
struct Parameters
{
    Eigen::Vector3d r = Eigen::Vector3d::Zero();
    Eigen::Vector2d t = Eigen::Vector2d::Zero();
    Eigen::VectorXd c;

    Eigen::VectorXd pack() const
    {
        Eigen::VectorXd x(5 + c.size());
        x << r, t, c;
        return x;
    }

    static Parameters unpack(const Eigen::VectorXd& x)
    {
        Parameters p;
        p.r = x.head<3>();
        p.t = x.segment<2>(3);
        p.c = x.tail(x.size() - 5);
        return p;
    }
};

/// Scale used by the solver: the known one, else estimated from the observation.
inline double camera_scale(const FitProblem& problem)
{
    if (problem.scale) {
        return *problem.scale;
    }
    return estimate_scale(problem.observation.points, problem.observation.visibility, problem.scale_options);
}

/**
 * Objective value at (r, t, c) under camera scale s. When `gradient` is
 * non-null it receives the analytic gradient stacked as (d/dr, d/dt, d/dc).
 * Points with v_i == 0 are skipped entirely.
 */
inline double objective(const FitProblem& problem, double s, const Parameters& p, Eigen::VectorXd* gradient = nullptr)
{
    const Vertices& T = problem.template_vertices();
    const auto& u = problem.observation.points;
    const auto& v = problem.observation.visibility;
    const auto K = problem.component_count();
    const Eigen::Matrix3d R = exp_map(p.r);
    std::array<Eigen::Matrix3d, 3> dR;
    if (gradient) {
        dR = exp_map_jacobian(p.r);
        gradient->setZero(5 + K);
    }
    double value = 0.0;
    for (Eigen::Index i = 0; i < T.cols(); ++i) {
        if (v(i) == 0.0) {
            continue;
        }
        const Eigen::Vector3d X = K > 0 ? Eigen::Vector3d(T.col(i) + problem.basis.block(i) * p.c) : Eigen::Vector3d(T.col(i));
        const Eigen::Vector2d e = s * (R.topRows<2>() * X) + p.t - u.col(i);
        value += v(i) * e.squaredNorm();
        if (gradient) {
            const Eigen::Vector2d we = 2.0 * v(i) * e;
            for (int k = 0; k < 3; ++k) {
                (*gradient)(k) += s * we.dot(dR[static_cast<std::size_t>(k)].topRows<2>() * X);
            }
            gradient->segment<2>(3) += we;
            if (K > 0) {
                gradient->tail(K).noalias() += s * (R.topRows<2>() * problem.basis.block(i)).transpose() * we;
            }
        }
    }
    if (K > 0) {
        value += problem.gamma * p.c.squaredNorm();
        if (gradient) {
            gradient->tail(K) += 2.0 * problem.gamma * p.c;
        }
    }
    return value;
}

/// Analytic (K+5)x(K+5) Hessian of the objective, including the second-order rotation terms.
inline Eigen::MatrixXd hessian(const FitProblem& problem, double s, const Parameters& p)
{
    const Vertices& T = problem.template_vertices();
    const auto& u = problem.observation.points;
    const auto& v = problem.observation.visibility;
    const auto K = problem.component_count();
    const Eigen::Index dim = 5 + K;
    const Eigen::Matrix3d R = exp_map(p.r);
    const auto dR = exp_map_jacobian(p.r);
    const auto d2R = exp_map_hessian(p.r);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::MatrixXd J(2, dim);
    for (Eigen::Index i = 0; i < T.cols(); ++i) {
        if (v(i) == 0.0) {
            continue;
        }
        const Eigen::Vector3d X = K > 0 ? Eigen::Vector3d(T.col(i) + problem.basis.block(i) * p.c) : Eigen::Vector3d(T.col(i));
        const Eigen::Vector2d e = s * (R.topRows<2>() * X) + p.t - u.col(i);
        for (int k = 0; k < 3; ++k) {
            J.col(k) = s * (dR[static_cast<std::size_t>(k)].topRows<2>() * X);
        }
        J.block<2, 2>(0, 3).setIdentity();
        if (K > 0) {
            J.rightCols(K) = s * (R.topRows<2>() * problem.basis.block(i));
        }
        H.noalias() += 2.0 * v(i) * J.transpose() * J;
        const Eigen::Vector2d we = 2.0 * v(i) * s * e;
        for (int k = 0; k < 3; ++k) {
            for (int l = 0; l < 3; ++l) {
                H(k, l) += we.dot(d2R[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)].topRows<2>() * X);
            }
            if (K > 0) {
                const Eigen::RowVectorXd rc = we.transpose() * (dR[static_cast<std::size_t>(k)].topRows<2>() * problem.basis.block(i));
                H.block(k, 5, 1, K) += rc;
                H.block(5, k, K, 1) += rc.transpose();
            }
        }
    }
    if (K > 0) {
        H.bottomRightCorner(K, K).diagonal().array() += 2.0 * problem.gamma;
    }
    return H;
}

} // namespace ttp
