/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/solver.hpp
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
#include "ttp/lbfgs.hpp"
#include "ttp/objective.hpp"

#include "Eigen/Cholesky"
#include "Eigen/Core"

#include <cmath>
#include <optional>
#include <vector>

namespace ttp {

struct Pose
{
    Eigen::Vector3d r = Eigen::Vector3d::Zero();
    Eigen::Vector2d t = Eigen::Vector2d::Zero();
};

/// Normal equations of the coefficient step: (Omega^T X Omega + gamma I) c = Omega^T X Upsilon.
struct NormalEquations
{
    Eigen::MatrixXd matrix;
    Eigen::VectorXd rhs;
};

/**
 * Builds the normal equations with Omega_i = s P R B_i (2xK per vertex),
 * Upsilon_i = u_i - s P R T_i - t and X = diag(v_1, v_1, v_2, v_2, ...).
 * Accumulated per vertex; the stacked 2N-row matrices are never formed.
 */
inline NormalEquations coefficient_system(const FitProblem& problem, double s, const Eigen::Vector3d& r, const Eigen::Vector2d& t)
{
    const auto K = problem.component_count();
    const Vertices& T = problem.template_vertices();
    const auto& u = problem.observation.points;
    const auto& v = problem.observation.visibility;
    const Eigen::Matrix<double, 2, 3> PR = exp_map(r).topRows<2>();
    NormalEquations eq{Eigen::MatrixXd::Zero(K, K), Eigen::VectorXd::Zero(K)};
    Eigen::MatrixXd omega(2, K);
    for (Eigen::Index i = 0; i < T.cols(); ++i) {
        if (v(i) == 0.0) {
            continue;
        }
        omega.noalias() = s * PR * problem.basis.block(i);
        const Eigen::Vector2d upsilon = u.col(i) - s * PR * T.col(i) - t;
        eq.matrix.noalias() += v(i) * omega.transpose() * omega;
        eq.rhs.noalias() += v(i) * omega.transpose() * upsilon;
    }
    eq.matrix.diagonal().array() += problem.gamma;
    return eq;
}

/**
 * Cholesky solve of a symmetric positive-definite system. With
 * `regularized` (gamma > 0) a failed factorisation is retried once with a
 * 1e-12 * trace diagonal jitter; otherwise an ill-conditioned or indefinite
 * matrix raises SingularSystem.
 */
inline Eigen::VectorXd solve_spd(const Eigen::MatrixXd& M, const Eigen::VectorXd& b, bool regularized)
{
    constexpr double min_rcond = 1e-12;
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() == Eigen::Success && llt.rcond() > min_rcond) {
        return llt.solve(b);
    }
    if (!regularized) {
        throw SingularSystem("coefficient normal matrix is singular (gamma = 0 and rank-deficient basis projection)");
    }
    const double jitter = 1e-12 * std::max(M.trace(), std::numeric_limits<double>::min());
    Eigen::MatrixXd Mj = M;
    Mj.diagonal().array() += jitter;
    llt.compute(Mj);
    if (llt.info() != Eigen::Success) {
        throw SingularSystem("coefficient normal matrix could not be factorised");
    }
    return llt.solve(b);
}

/// Closed-form minimiser of the objective over c with (r, t) fixed.
inline Eigen::VectorXd coefficient_step(const FitProblem& problem, double s, const Eigen::Vector3d& r, const Eigen::Vector2d& t)
{
    if (problem.component_count() == 0) {
        return Eigen::VectorXd(0);
    }
    const NormalEquations eq = coefficient_system(problem, s, r, t);
    return solve_spd(eq.matrix, eq.rhs, problem.gamma > 0.0);
}

struct RotationStepResult
{
    Pose pose;
    double objective = 0.0;
    int evals = 0;
    LbfgsStatus status = LbfgsStatus::converged;

    bool converged() const noexcept { return status == LbfgsStatus::converged; }
};

/// L-BFGS over (r, t) with c held fixed, started from `init`. The result is wrapped to |r| <= pi.
inline RotationStepResult rotation_step(const FitProblem& problem, double s, const Eigen::VectorXd& c, const Pose& init)
{
    auto fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd& g) {
        Parameters p;
        p.r = x.head<3>();
        p.t = x.tail<2>();
        p.c = c;
        Eigen::VectorXd full;
        const double f = objective(problem, s, p, &full);
        g = full.head<5>();
        return f;
    };
    Eigen::VectorXd x0(5);
    x0 << init.r, init.t;
    const LbfgsResult lb = lbfgs_minimize(fn, x0, problem.lbfgs);
    RotationStepResult out;
    out.pose.r = wrap_rotation(lb.x.head<3>());
    out.pose.t = lb.x.tail<2>();
    out.objective = lb.f;
    out.evals = lb.evals;
    out.status = lb.status;
    return out;
}

struct FitIterate
{
    Parameters parameters;
    double objective = 0.0;
};

struct FitResult
{
    Eigen::Vector3d r = Eigen::Vector3d::Zero();
    Eigen::Vector2d t = Eigen::Vector2d::Zero();
    double s = 1.0;
    Eigen::VectorXd c;
    std::vector<double> objective_trace; ///< objective after each outer iteration
    bool converged = false;
    int evals = 0;                   ///< L-BFGS function evaluations
    std::vector<FitIterate> iterates; ///< index 0 is the initial state, then one per outer iteration
    double objective = 0.0;          ///< at the returned parameters (after polishing, if enabled)
    bool polished = false;

    Parameters parameters() const { return {r, t, c}; }
    WeakPerspectiveCamera camera() const { return {s, t}; }
};

namespace detail {

// Damped Newton on all of (r, t, c) with backtracking. Returns true once the
// gradient meets the tolerance; a final undamped step then moves the iterate
// to the round-off floor when it lowers the gradient norm.
inline bool polish_parameters(const FitProblem& problem, double s, Parameters& p, double& value)
{
    auto stationary = [&](const Eigen::VectorXd& g) {
        return g.norm() <= problem.polish_tolerance * std::max(1.0, std::abs(value));
    };
    auto newton_direction = [&](const Eigen::VectorXd& g, Eigen::VectorXd& dir) {
        const Eigen::MatrixXd H = hessian(problem, s, p);
        double damping = 0.0;
        Eigen::LLT<Eigen::MatrixXd> llt;
        for (int attempt = 0; attempt < 60; ++attempt) {
            Eigen::MatrixXd Hd = H;
            Hd.diagonal().array() += damping;
            llt.compute(Hd);
            if (llt.info() == Eigen::Success) {
                dir = -llt.solve(g);
                return true;
            }
            damping = damping == 0.0 ? 1e-10 * std::max(1.0, H.diagonal().cwiseAbs().maxCoeff()) : damping * 10.0;
        }
        return false;
    };
    Eigen::VectorXd g, dir;
    value = objective(problem, s, p, &g);
    for (int step = 0; step < problem.polish_max_steps && !stationary(g); ++step) {
        if (!newton_direction(g, dir)) {
            return false;
        }
        const double slope = g.dot(dir);
        const Eigen::VectorXd x = p.pack();
        double alpha = 1.0;
        bool accepted = false;
        for (int bt = 0; bt < 40 && !accepted; ++bt, alpha *= 0.5) {
            const Parameters trial = Parameters::unpack(x + alpha * dir);
            Eigen::VectorXd g_trial;
            const double f = objective(problem, s, trial, &g_trial);
            // Within round-off of the current value, a smaller gradient decides.
            const bool within_noise = f <= value + 1e-10 * std::abs(value) && g_trial.norm() < g.norm();
            if (f <= value + 1e-4 * alpha * slope || within_noise) {
                p = trial;
                accepted = true;
            }
        }
        value = objective(problem, s, p, &g);
        if (!accepted) {
            break;
        }
    }
    if (!stationary(g)) {
        return false;
    }
    if (newton_direction(g, dir)) {
        const Parameters trial = Parameters::unpack(p.pack() + dir);
        Eigen::VectorXd g_trial;
        const double f = objective(problem, s, trial, &g_trial);
        if (g_trial.norm() < g.norm()) {
            p = trial;
            value = f;
        }
    }
    return true;
}

} // namespace detail

/// Initial pose used when none is given: r = 0 and t at the visibility-weighted centroid of u.
inline Pose default_initial_pose(const FitProblem& problem)
{
    const auto& u = problem.observation.points;
    const auto& v = problem.observation.visibility;
    Pose pose;
    const double total = v.sum();
    if (total > 0.0) {
        pose.t = (u * v) / total;
    } else if (u.cols() > 0) {
        pose.t = u.rowwise().mean();
    }
    return pose;
}

/**
 * Alternating fit: the scale is fixed once, c starts at zero, and each outer
 * iteration runs rotation_step (warm-started) followed by coefficient_step.
 */
inline FitResult fit(const FitProblem& problem, const std::optional<Pose>& init = std::nullopt)
{
    problem.validate();
    FitResult result;
    result.s = camera_scale(problem);
    const double s = result.s;
    Pose pose = init ? *init : default_initial_pose(problem);
    Eigen::VectorXd c = Eigen::VectorXd::Zero(problem.component_count());
    result.iterates.push_back({{pose.r, pose.t, c}, objective(problem, s, {pose.r, pose.t, c})});

    bool last_converged = false;
    for (int it = 0; it < problem.iterations; ++it) {
        const RotationStepResult step = rotation_step(problem, s, c, pose);
        pose = step.pose;
        result.evals += step.evals;
        last_converged = step.converged();
        c = coefficient_step(problem, s, pose.r, pose.t);
        const double value = objective(problem, s, {pose.r, pose.t, c});
        result.objective_trace.push_back(value);
        result.iterates.push_back({{pose.r, pose.t, c}, value});
    }
    Parameters p{pose.r, pose.t, c};
    result.objective = result.objective_trace.back();
    result.converged = last_converged;
    if (problem.polish) {
        result.polished = detail::polish_parameters(problem, s, p, result.objective);
        p.r = wrap_rotation(p.r);
        result.converged = result.polished;
    }
    result.r = p.r;
    result.t = p.t;
    result.c = p.c;
    return result;
}

} // namespace ttp
