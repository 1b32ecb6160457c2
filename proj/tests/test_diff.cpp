/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: tests/test_diff.cpp
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
#include "fixtures.hpp"
#include "oracles.hpp"

#include "ttp/diff.hpp"
#include "ttp/harness.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace ttp;

namespace {

struct Case
{
    FitProblem problem;
    FitResult result;
};

Case polished_case(std::uint64_t seed, const std::string& mesh, Eigen::Index K, double noise, double occlusion = 0.0,
                   ScaleSource source = ScaleSource::truth)
{
    SyntheticScenario sc;
    sc.seed = seed;
    sc.mesh = mesh;
    sc.components = K;
    sc.noise = noise;
    sc.occlusion = occlusion;
    const SyntheticData data = generate_synthetic(sc);
    Case out;
    out.problem = make_problem(data, 1e-3, 4, source);
    out.problem.polish = true;
    out.result = fit(out.problem);
    return out;
}

std::vector<InputCoordinate> all_coordinates(Eigen::Index N, Eigen::Index K, bool with_template = false)
{
    std::vector<InputCoordinate> sel;
    for (Eigen::Index i = 0; i < 2 * N; ++i) {
        sel.push_back({InputCoordinate::Block::points, i});
    }
    for (Eigen::Index i = 0; i < N; ++i) {
        sel.push_back({InputCoordinate::Block::visibility, i});
    }
    for (Eigen::Index i = 0; i < 3 * N * K; ++i) {
        sel.push_back({InputCoordinate::Block::basis, i});
    }
    if (with_template) {
        for (Eigen::Index i = 0; i < 3 * N; ++i) {
            sel.push_back({InputCoordinate::Block::template_vertices, i});
        }
    }
    return sel;
}

Eigen::VectorXd gather(const InputGradients& g, const std::vector<InputCoordinate>& sel, Eigen::Index K)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(sel.size()));
    for (std::size_t k = 0; k < sel.size(); ++k) {
        const auto idx = sel[k].index;
        double value = 0.0;
        switch (sel[k].block) {
        case InputCoordinate::Block::points:
            value = g.points(idx % 2, idx / 2);
            break;
        case InputCoordinate::Block::visibility:
            value = g.visibility(idx);
            break;
        case InputCoordinate::Block::basis:
            value = g.basis.block(idx / (3 * K))((idx % (3 * K)) / K, idx % K);
            break;
        case InputCoordinate::Block::template_vertices:
            value = (*g.template_vertices)(idx % 3, idx / 3);
            break;
        }
        out(static_cast<Eigen::Index>(k)) = value;
    }
    return out;
}

Eigen::VectorXd random_weights(Eigen::Index n, std::mt19937_64& rng)
{
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::VectorXd w(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        w(k) = g(rng);
    }
    return w;
}

} // namespace

TEST(SolverVjp, ZeroDownstreamGradientGivesZero)
{
    const Case c = polished_case(60, "sphere(30)", 2, 0.01);
    const InputGradients g = solver_vjp(c.problem, c.result, Eigen::VectorXd::Zero(7));
    EXPECT_TRUE(g.points.isZero(0.0));
    EXPECT_TRUE(g.visibility.isZero(0.0));
    EXPECT_TRUE(g.basis.flat().isZero(0.0));
}

TEST(SolverVjp, HiddenPointsHaveZeroPointGradient)
{
    std::mt19937_64 rng(61);
    const Case c = polished_case(61, "sphere(40)", 3, 0.01, 0.3);
    const InputGradients g = solver_vjp(c.problem, c.result, random_weights(8, rng));
    int hidden = 0;
    for (Eigen::Index i = 0; i < c.problem.vertex_count(); ++i) {
        if (c.problem.observation.visibility(i) == 0.0) {
            ++hidden;
            EXPECT_EQ(g.points(0, i), 0.0);
            EXPECT_EQ(g.points(1, i), 0.0);
            EXPECT_TRUE(g.basis.block(i).isZero(0.0));
        }
    }
    EXPECT_GE(hidden, 12);
}

TEST(SolverVjp, Linear)
{
    std::mt19937_64 rng(62);
    const Case c = polished_case(62, "sphere(40)", 3, 0.01);
    const Eigen::VectorXd g1 = random_weights(8, rng), g2 = random_weights(8, rng);
    const InputGradients a = solver_vjp(c.problem, c.result, g1);
    const InputGradients b = solver_vjp(c.problem, c.result, g2);
    const InputGradients ab = solver_vjp(c.problem, c.result, g1 + g2);
    EXPECT_LT((ab.points - a.points - b.points).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((ab.visibility - a.visibility - b.visibility).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((ab.basis.flat() - a.basis.flat() - b.basis.flat()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(SolverVjp, RigidOnlyRotationMatchesFullFitDifferences)
{
    const Case c = polished_case(63, "sphere(30)", 0, 0.0);
    ASSERT_TRUE(c.result.converged);
    for (int k = 0; k < 3; ++k) {
        const Eigen::VectorXd g = Eigen::VectorXd::Unit(5, k);
        const InputGradients ift = solver_vjp(c.problem, c.result, g);
        std::vector<InputCoordinate> sel;
        for (Eigen::Index i = 0; i < 60; ++i) {
            sel.push_back({InputCoordinate::Block::points, i});
        }
        const Eigen::VectorXd fd = fd_oracle(c.problem, [k](const FitResult& r) { return r.r(k); }, sel, 1e-5);
        EXPECT_LT(oracle::relative_error(gather(ift, sel, 0), fd), 1e-3);
    }
}

TEST(SolverVjp, MatchesFiniteDifferencesOnRandomProblems)
{
    std::mt19937_64 rng(64);
    const std::vector<std::pair<std::string, Eigen::Index>> cases = {
        {"sphere(12)", 0}, {"sphere(20)", 2}, {"sphere(30)", 4}, {"sphere(50)", 1}, {"grid(5,5)", 3}};
    std::uint64_t seed = 64;
    for (const auto& [mesh, K] : cases) {
        const Case c = polished_case(seed++, mesh, K, 0.01);
        const Eigen::VectorXd w = random_weights(5 + K, rng);
        const auto sel = all_coordinates(c.problem.vertex_count(), K);
        const InputGradients ift = solver_vjp(c.problem, c.result, w);
        const Eigen::VectorXd fd = fd_oracle(c.problem, [&](const FitResult& r) { return w.dot(r.parameters().pack()); }, sel, 1e-5);
        EXPECT_LT(oracle::relative_error(gather(ift, sel, K), fd), 1e-3) << mesh;
    }
}

TEST(SolverVjp, TemplateGradient)
{
    std::mt19937_64 rng(65);
    const Case c = polished_case(65, "sphere(16)", 2, 0.01);
    const Eigen::VectorXd w = random_weights(7, rng);
    VjpOptions opts;
    opts.template_gradient = true;
    const InputGradients ift = solver_vjp(c.problem, c.result, w, opts);
    ASSERT_TRUE(ift.template_vertices.has_value());
    std::vector<InputCoordinate> sel;
    for (Eigen::Index i = 0; i < 48; ++i) {
        sel.push_back({InputCoordinate::Block::template_vertices, i});
    }
    const Eigen::VectorXd fd = fd_oracle(c.problem, [&](const FitResult& r) { return w.dot(r.parameters().pack()); }, sel, 1e-5);
    EXPECT_LT(oracle::relative_error(gather(ift, sel, 2), fd), 1e-3);
}

TEST(SolverVjp, ThroughScale)
{
    std::mt19937_64 rng(66);
    const Case c = polished_case(66, "sphere(20)", 2, 0.01, 0.0, ScaleSource::rule);
    const Eigen::VectorXd w = random_weights(7, rng);
    VjpOptions opts;
    opts.through_scale = true;
    const InputGradients ift = solver_vjp(c.problem, c.result, w, opts);
    const auto sel = all_coordinates(20, 0);
    FdOptions fd_opts;
    fd_opts.hold_scale = false;
    const Eigen::VectorXd fd =
        fd_oracle(c.problem, [&](const FitResult& r) { return w.dot(r.parameters().pack()); }, sel, 1e-5, fd_opts);
    EXPECT_LT(oracle::relative_error(gather(ift, sel, 2), fd), 1e-3);
    // The constant-scale gradient differs.
    const InputGradients held = solver_vjp(c.problem, c.result, w);
    EXPECT_GT(oracle::relative_error(gather(held, sel, 2), fd), 1e-3);
}

TEST(SolverVjp, RequiresStationaryConvergedFit)
{
    const Case c = polished_case(67, "sphere(20)", 2, 0.02);
    FitResult moved = c.result;
    moved.t(0) += 1.0;
    EXPECT_THROW(solver_vjp(c.problem, moved, Eigen::VectorXd::Ones(7)), NotStationary);
    FitResult unconverged = c.result;
    unconverged.converged = false;
    EXPECT_THROW(solver_vjp(c.problem, unconverged, Eigen::VectorXd::Ones(7)), NotStationary);
    EXPECT_THROW(solver_vjp(c.problem, c.result, Eigen::VectorXd::Ones(6)), DimensionMismatch);
}

TEST(SolverVjp, SingularHessianIsReported)
{
    // Nothing visible and no deformation: the objective is flat in (r, t).
    std::mt19937_64 rng(68);
    FitProblem p = fixture::random_problem(10, 0, 1e-3, rng);
    p.observation.visibility.setZero();
    p.scale = 20.0;
    FitResult r;
    r.s = 20.0;
    r.c = Eigen::VectorXd(0);
    r.converged = true;
    try {
        solver_vjp(p, r, Eigen::VectorXd::Ones(5));
        FAIL() << "expected SingularHessian";
    } catch (const SingularHessian& e) {
        EXPECT_GT(e.condition_number(), 1e12);
    }
}

TEST(FdOracle, EnvelopeTheorem)
{
    // With the inputs of l held fixed, l(theta*(x)) is flat to first order at a stationary point.
    const Case c = polished_case(69, "sphere(20)", 2, 0.01);
    const FitProblem& p = c.problem;
    const auto sel = all_coordinates(20, 2);
    const Eigen::VectorXd fd = fd_oracle(p, [&](const FitResult& r) { return objective(p, r.s, r.parameters()); }, sel, 1e-5);
    EXPECT_LT(fd.cwiseAbs().maxCoeff(), 1e-6);
    // The same differences of a non-stationary function of theta* are not small.
    const Eigen::VectorXd moving = fd_oracle(p, [](const FitResult& r) { return r.t(0); }, sel, 1e-5);
    EXPECT_GT(moving.cwiseAbs().maxCoeff(), 1e-2);
}

TEST(FdOracle, EmptySelectorAndStepRange)
{
    const Case c = polished_case(70, "sphere(12)", 1, 0.0);
    auto loss = [](const FitResult& r) { return r.t(0); };
    EXPECT_EQ(fd_oracle(c.problem, loss, {}, 1e-5).size(), 0);
    EXPECT_THROW(fd_oracle(c.problem, loss, {{InputCoordinate::Block::points, 0}}, 1e-2), Error);
    EXPECT_THROW(fd_oracle(c.problem, loss, {{InputCoordinate::Block::points, 0}}, 1e-9), Error);
}

TEST(CoefficientStepVjp, MatchesDifferencedClosedForm)
{
    std::mt19937_64 rng(71);
    for (int trial = 0; trial < 5; ++trial) {
        const Eigen::Index K = 1 + trial % 4;
        const FitProblem p = fixture::random_problem(15, K, 0.05, rng);
        const Parameters x = fixture::random_parameters(K, rng);
        const Eigen::VectorXd gc = random_weights(K, rng);
        const InputGradients adj = coefficient_step_vjp(p, 30.0, x.r, x.t, gc);
        const auto sel = all_coordinates(15, K);
        Eigen::VectorXd fd(static_cast<Eigen::Index>(sel.size()));
        for (std::size_t k = 0; k < sel.size(); ++k) {
            auto value = [&](double h) {
                FitProblem q = p;
                detail::perturb(q, sel[k], h);
                return gc.dot(coefficient_step(q, 30.0, x.r, x.t));
            };
            // Five-point stencil; the closed form is smooth in every input.
            const double h = 1e-3;
            fd(static_cast<Eigen::Index>(k)) = (-value(2 * h) + 8 * value(h) - 8 * value(-h) + value(-2 * h)) / (12 * h);
        }
        EXPECT_LT(oracle::relative_error(gather(adj, sel, K), fd), 1e-8);
    }
}
