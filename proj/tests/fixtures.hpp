/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: tests/fixtures.hpp
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

#include "ttp/objective.hpp"
#include "ttp/mesh.hpp"

#include <memory>
#include <random>

namespace fixture {

inline ttp::DeformationBasis gaussian_basis(Eigen::Index n, Eigen::Index k, double sigma, std::mt19937_64& rng)
{
    std::normal_distribution<double> g(0.0, sigma);
    ttp::DeformationBasis B(n, k);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index r = 0; r < 3; ++r) {
            for (Eigen::Index c = 0; c < k; ++c) {
                B.block(i)(r, c) = g(rng);
            }
        }
    }
    return B;
}

/// Problem with arbitrary (not generated-from-truth) observations on an N-vertex sphere.
inline ttp::FitProblem random_problem(int n, Eigen::Index k, double gamma, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    ttp::FitProblem p;
    p.mesh = std::make_shared<const ttp::TemplateMesh>(ttp::make_fibonacci_sphere(n));
    p.basis = gaussian_basis(n, k, 0.2, rng);
    p.observation.points = ttp::Points2(2, n);
    p.observation.visibility = ttp::Weights(n);
    for (int i = 0; i < n; ++i) {
        p.observation.points.col(i) = 40.0 * Eigen::Vector2d(g(rng), g(rng)) + Eigen::Vector2d(128, 128);
        p.observation.visibility(i) = unit(rng);
    }
    p.gamma = gamma;
    return p;
}

inline ttp::Parameters random_parameters(Eigen::Index k, std::mt19937_64& rng)
{
    std::normal_distribution<double> g(0.0, 1.0);
    ttp::Parameters p;
    p.r = Eigen::Vector3d(g(rng), g(rng), g(rng)) * 0.8;
    p.t = Eigen::Vector2d(128 + 10 * g(rng), 128 + 10 * g(rng));
    p.c = Eigen::VectorXd(k);
    for (Eigen::Index j = 0; j < k; ++j) {
        p.c(j) = g(rng);
    }
    return p;
}

} // namespace fixture
