/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/diff.hpp
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
#include "ttp/geometry.hpp"
#include "ttp/objective.hpp"
#include "ttp/solver.hpp"

#include "Eigen/Core"
#include "Eigen/Eigenvalues"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace ttp {

/// Gradients of a downstream loss with respect to the solver inputs.
struct InputGradients
{
    Points2 points;                      ///< 2xN
    Weights visibility;                  ///< N
    DeformationBasis basis;              ///< N blocks of 3xK
    std::optional<Vertices> template_vertices; ///< 3xN, only when requested
};

struct VjpOptions
{
    /// Also propagate through the scale estimate s(u, v). Off by default: s is treated as a constant.
    bool through_scale = false;
    bool template_gradient = false;
    double max_condition = 1e12;
    double stationarity_tolerance = 1e-6;
};

/**
 * Vector-Jacobian product through the fitted optimum. With theta = (r, t, c)
 * stationary, d(theta*)/dx = -H^{-1} d^2 l/(d theta dx), so for a downstream
 * gradient g one solve H y = g gives
 *     dLoss/dx = -d/dx [ y . grad_theta l(theta*, x) ].
 * The mixed partials are contracted analytically per vertex.
 */
inline InputGradients solver_vjp(const FitProblem& problem, const FitResult& result, const Eigen::VectorXd& g,
                                 const VjpOptions& options = {})
{
    problem.validate();
    const auto K = problem.component_count();
    const auto N = problem.vertex_count();
    if (g.size() != 5 + K) {
        throw DimensionMismatch("downstream gradient must have K + 5 entries");
    }
    if (!result.converged) {
        throw NotStationary("solver_vjp requires a converged fit");
    }
    const double s = result.s;
    const Parameters p = result.parameters();
    Eigen::VectorXd grad;
    objective(problem, s, p, &grad);
    if (!(grad.norm() < options.stationarity_tolerance)) {
        throw NotStationary("objective gradient norm " + std::to_string(grad.norm()) + " exceeds stationarity tolerance");
    }

    InputGradients out;
    out.points = Points2::Zero(2, N);
    out.visibility = Weights::Zero(N);
    out.basis = DeformationBasis(N, K);
    if (options.template_gradient) {
        out.template_vertices = Vertices::Zero(3, N);
    }
    if (g.isZero(0.0)) {
        return out;
    }

    const Eigen::MatrixXd H = hessian(problem, s, p);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
    const Eigen::VectorXd lambda = eig.eigenvalues();
    const double largest = lambda.cwiseAbs().maxCoeff();
    const double smallest = lambda.cwiseAbs().minCoeff();
    const double condition = smallest > 0.0 ? largest / smallest : std::numeric_limits<double>::infinity();
    if (!(condition <= options.max_condition)) {
        throw SingularHessian(condition, "Hessian condition number " + std::to_string(condition) + " exceeds "
                                             + std::to_string(options.max_condition));
    }
    const Eigen::VectorXd y = eig.eigenvectors() * ((eig.eigenvectors().transpose() * g).array() / lambda.array()).matrix();
    const Eigen::Vector3d y_r = y.head<3>();
    const Eigen::Vector2d y_t = y.segment<2>(3);
    const Eigen::VectorXd y_c = y.tail(K);

    const Vertices& T = problem.template_vertices();
    const auto& u = problem.observation.points;
    const auto& v = problem.observation.visibility;
    const Eigen::Matrix3d R = exp_map(p.r);
    const auto dR = exp_map_jacobian(p.r);
    const Eigen::Matrix3d dRy = y_r(0) * dR[0] + y_r(1) * dR[1] + y_r(2) * dR[2];
    const Eigen::Matrix<double, 2, 3> sPR = s * R.topRows<2>();
    const Eigen::Matrix<double, 2, 3> sPdR = s * dRy.topRows<2>();
    double d_scale = 0.0; // d/ds of y . grad_theta l

    for (Eigen::Index i = 0; i < N; ++i) {
        const Eigen::Vector3d X = K > 0 ? Eigen::Vector3d(T.col(i) + problem.basis.block(i) * p.c) : Eigen::Vector3d(T.col(i));
        const Eigen::Vector2d e = sPR * X + p.t - u.col(i);
        // First-order change of the model point along y.
        Eigen::Vector2d delta = sPdR * X + y_t;
        if (K > 0) {
            delta += sPR * (problem.basis.block(i) * y_c);
        }
        const double vi = v(i);
        out.points.col(i) = 2.0 * vi * delta;
        out.visibility(i) = -2.0 * e.dot(delta);
        if (vi == 0.0) {
            continue;
        }
        if (K > 0) {
            const Eigen::Vector3d a = sPR.transpose() * delta + sPdR.transpose() * e;
            const Eigen::Vector3d b = sPR.transpose() * e;
            out.basis.block(i) = -2.0 * vi * (a * p.c.transpose() + b * y_c.transpose());
        }
        if (options.template_gradient) {
            out.template_vertices->col(i) = -2.0 * vi * (sPR.transpose() * delta + sPdR.transpose() * e);
        }
        if (options.through_scale && !problem.scale) {
            Eigen::Vector2d ddelta = (sPdR * X) / s;
            if (K > 0) {
                ddelta += (sPR * (problem.basis.block(i) * y_c)) / s;
            }
            d_scale += 2.0 * vi * ((sPR * X / s).dot(delta) + e.dot(ddelta));
        }
    }
    if (options.through_scale && !problem.scale) {
        const ScaleGradient sg = estimate_scale_gradient(u, v, problem.scale_options);
        out.points += -d_scale * sg.d_points;
        out.visibility += -d_scale * sg.d_visibility;
    }
    return out;
}

/**
 * Adjoint of the closed-form coefficient step alone, with (r, t, s) fixed:
 * for c = M^{-1} b, M = Omega^T X Omega + gamma I, b = Omega^T X Upsilon and
 * a downstream gradient g_c, solve M y = g_c and contract y with dM and db.
 */
inline InputGradients coefficient_step_vjp(const FitProblem& problem, double s, const Eigen::Vector3d& r,
                                           const Eigen::Vector2d& t, const Eigen::VectorXd& g_c)
{
    const auto K = problem.component_count();
    const auto N = problem.vertex_count();
    if (g_c.size() != K) {
        throw DimensionMismatch("coefficient gradient must have K entries");
    }
    InputGradients out;
    out.points = Points2::Zero(2, N);
    out.visibility = Weights::Zero(N);
    out.basis = DeformationBasis(N, K);
    if (K == 0) {
        return out;
    }
    const NormalEquations eq = coefficient_system(problem, s, r, t);
    const Eigen::VectorXd c = solve_spd(eq.matrix, eq.rhs, problem.gamma > 0.0);
    const Eigen::VectorXd y = solve_spd(eq.matrix, g_c, problem.gamma > 0.0);
    const Vertices& T = problem.template_vertices();
    const auto& u = problem.observation.points;
    const auto& v = problem.observation.visibility;
    const Eigen::Matrix<double, 2, 3> sPR = s * exp_map(r).topRows<2>();
    for (Eigen::Index i = 0; i < N; ++i) {
        const Eigen::MatrixXd omega = sPR * problem.basis.block(i);
        const Eigen::Vector2d upsilon = u.col(i) - sPR * T.col(i) - t;
        const Eigen::Vector2d oy = omega * y;
        const Eigen::Vector2d residual = upsilon - omega * c;
        // g . dc = y . (db - dM c)
        out.points.col(i) = v(i) * oy;
        out.visibility(i) = oy.dot(residual);
        if (v(i) != 0.0) {
            out.basis.block(i) = v(i) * sPR.transpose() * (residual * y.transpose() - oy * c.transpose());
        }
    }
    return out;
}

/// One scalar input of the solver, addressed by block and flat index.
struct InputCoordinate
{
    enum class Block
    {
        points,            ///< index = 2 i + axis
        visibility,        ///< index = i
        basis,             ///< index = i * 3K + row * K + k
        template_vertices  ///< index = 3 i + row
    };
    Block block;
    Eigen::Index index;
};

struct FdOptions
{
    /// Keep the camera scale of the unperturbed fit, matching solver_vjp's constant-scale convention.
    bool hold_scale = true;
    /// Warm-start every perturbed fit from the unperturbed pose.
    bool warm_start = true;
};

namespace detail {

inline void perturb(FitProblem& problem, const InputCoordinate& coord, double delta)
{
    const auto K = problem.component_count();
    switch (coord.block) {
    case InputCoordinate::Block::points:
        problem.observation.points(coord.index % 2, coord.index / 2) += delta;
        break;
    case InputCoordinate::Block::visibility:
        problem.observation.visibility(coord.index) += delta;
        break;
    case InputCoordinate::Block::basis: {
        const Eigen::Index i = coord.index / (3 * K);
        const Eigen::Index rem = coord.index % (3 * K);
        problem.basis.block(i)(rem / K, rem % K) += delta;
        break;
    }
    case InputCoordinate::Block::template_vertices: {
        Vertices T = problem.template_vertices();
        T(coord.index % 3, coord.index / 3) += delta;
        MeshOptions opts;
        opts.normalize = false;
        problem.mesh = std::make_shared<const TemplateMesh>(TemplateMesh::from_arrays(T, problem.mesh->faces(), opts));
        break;
    }
    }
}

} // namespace detail

/**
 * Central differences of loss(fit(problem)) over the selected inputs. Fits
 * are deterministic, so the result is reproducible.
 */
inline Eigen::VectorXd fd_oracle(const FitProblem& problem, const std::function<double(const FitResult&)>& loss,
                                 const std::vector<InputCoordinate>& selector, double step, const FdOptions& options = {})
{
    if (!(step >= 1e-7 && step <= 1e-3)) {
        throw Error("finite-difference step must lie in [1e-7, 1e-3]");
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(selector.size()));
    if (selector.empty()) {
        return out;
    }
    const FitResult base = fit(problem);
    FitProblem work = problem;
    if (options.hold_scale) {
        work.scale = base.s;
    }
    std::optional<Pose> init;
    if (options.warm_start) {
        init = Pose{base.r, base.t};
    }
    for (std::size_t k = 0; k < selector.size(); ++k) {
        FitProblem plus = work;
        detail::perturb(plus, selector[k], step);
        FitProblem minus = work;
        detail::perturb(minus, selector[k], -step);
        out(static_cast<Eigen::Index>(k)) = (loss(fit(plus, init)) - loss(fit(minus, init))) / (2.0 * step);
    }
    return out;
}

} // namespace ttp
