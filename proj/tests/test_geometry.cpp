/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: tests/test_geometry.cpp
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
#include "oracles.hpp"

#include "ttp/geometry.hpp"
#include "ttp/mesh.hpp"

#include "Eigen/Geometry"

#include <gtest/gtest.h>

#include <numbers>
#include <random>

using namespace ttp;

TEST(ExpMap, ZeroIsIdentityExactly)
{
    EXPECT_EQ(exp_map(Eigen::Vector3d::Zero()), Eigen::Matrix3d::Identity());
}

TEST(ExpMap, QuarterTurnAboutZ)
{
    const Eigen::Matrix3d R = exp_map(Eigen::Vector3d(0, 0, std::numbers::pi / 2));
    EXPECT_LT((R * Eigen::Vector3d::UnitX() - Eigen::Vector3d::UnitY()).norm(), 1e-15);
}

TEST(ExpMap, MatchesTaylorSeries)
{
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::Vector3d r = oracle::random_rotation_vector(rng, 1.0).normalized() * 0.7;
        EXPECT_LT((exp_map(r) - oracle::taylor_exp(oracle::hat(r))).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(ExpMap, SeriesBranchMatchesClosedFormAtSwitch)
{
    // Just below and above the small-angle switch the two branches agree.
    const Eigen::Vector3d axis = Eigen::Vector3d(1, -2, 0.5).normalized();
    for (double theta : {1e-13, 1e-7, 1e-3, 0.1999999, 0.2000001}) {
        const Eigen::Vector3d r = theta * axis;
        EXPECT_LT((exp_map(r) - oracle::taylor_exp(oracle::hat(r))).cwiseAbs().maxCoeff(), 1e-15) << theta;
    }
}

TEST(ExpMap, OrthogonalWithUnitDeterminant)
{
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    for (int trial = 0; trial < 10000; ++trial) {
        const Eigen::Vector3d r(u(rng), u(rng), u(rng));
        const Eigen::Matrix3d R = exp_map(r);
        ASSERT_LT((R.transpose() * R - Eigen::Matrix3d::Identity()).norm(), 1e-10);
        ASSERT_NEAR(R.determinant(), 1.0, 1e-10);
    }
}

TEST(ExpMap, GeodesicRoundTrip)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> angle(1e-3, std::numbers::pi - 1e-3);
    for (int trial = 0; trial < 1000; ++trial) {
        const Eigen::Vector3d r = oracle::random_rotation_vector(rng, 1.0).normalized() * angle(rng);
        ASSERT_NEAR(geodesic_distance(exp_map(r), Eigen::Matrix3d::Identity()), r.norm(), 1e-8);
    }
}

TEST(ExpMapJacobian, SkewAtOrigin)
{
    const auto d = exp_map_jacobian(Eigen::Vector3d::Zero());
    for (int k = 0; k < 3; ++k) {
        EXPECT_EQ(d[static_cast<std::size_t>(k)], oracle::hat(Eigen::Vector3d::Unit(k)));
    }
}

TEST(ExpMapJacobian, MatchesCentralDifferences)
{
    std::mt19937_64 rng(4);
    std::vector<Eigen::Vector3d> points = {Eigen::Vector3d(0, 0, std::numbers::pi / 2), Eigen::Vector3d(1e-8, 0, 0),
                                           Eigen::Vector3d(0.15, -0.1, 0.05), Eigen::Vector3d(0.2, 0, 0)};
    for (int k = 0; k < 50; ++k) {
        points.push_back(oracle::random_rotation_vector(rng, 3.0));
    }
    for (const auto& r : points) {
        const auto d = exp_map_jacobian(r);
        auto flat = [](const Eigen::VectorXd& x) {
            const Eigen::Matrix3d R = exp_map(x);
            return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(R.data(), 9));
        };
        const Eigen::MatrixXd J = oracle::jacobian(flat, r, 1e-6);
        for (int k = 0; k < 3; ++k) {
            const Eigen::Map<const Eigen::VectorXd> col(d[static_cast<std::size_t>(k)].data(), 9);
            EXPECT_LT(oracle::relative_error(col, J.col(k), 1e-3), 1e-5) << r.transpose();
        }
    }
}

TEST(ExpMapHessian, MatchesDifferencedJacobian)
{
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const Eigen::Vector3d r = trial == 0 ? Eigen::Vector3d(0.01, 0.02, -0.01) : oracle::random_rotation_vector(rng, 3.0);
        const auto h = exp_map_hessian(r);
        for (int l = 0; l < 3; ++l) {
            const Eigen::Vector3d e = 1e-6 * Eigen::Vector3d::Unit(l);
            const auto jp = exp_map_jacobian(r + e);
            const auto jm = exp_map_jacobian(r - e);
            for (int k = 0; k < 3; ++k) {
                const Eigen::Matrix3d fd = (jp[static_cast<std::size_t>(k)] - jm[static_cast<std::size_t>(k)]) / 2e-6;
                EXPECT_LT(oracle::relative_error(h[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)], fd, 1e-3), 1e-5);
            }
        }
    }
}

TEST(WrapRotation, PreservesRotation)
{
    const Eigen::Vector3d axis = Eigen::Vector3d(0.3, 0.4, -0.5).normalized();
    for (double theta : {0.5, 3.0, 3.5, 7.0, 12.0}) {
        const Eigen::Vector3d r = theta * axis;
        const Eigen::Vector3d w = wrap_rotation(r);
        EXPECT_LE(w.norm(), std::numbers::pi + 1e-12);
        EXPECT_LT((exp_map(w) - exp_map(r)).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(Geodesic, IdenticalIsZero)
{
    const Eigen::Matrix3d R = exp_map(Eigen::Vector3d(0.3, -1.0, 2.0));
    EXPECT_NEAR(geodesic_distance(R, R), 0.0, 1e-7);
}

TEST(Geodesic, KnownAngle)
{
    const Eigen::Vector3d axis = Eigen::Vector3d(1, 2, 3).normalized();
    EXPECT_NEAR(geodesic_distance(Eigen::Matrix3d::Identity(), exp_map(0.3 * axis)), 0.3, 1e-12);
}

TEST(Geodesic, MatchesEigenLogOracleAndIsSymmetric)
{
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Matrix3d A = exp_map(oracle::random_rotation_vector(rng, 3.1));
        const Eigen::Matrix3d B = exp_map(oracle::random_rotation_vector(rng, 3.1));
        const double d = geodesic_distance(A, B);
        EXPECT_NEAR(d, oracle::rotation_angle(A.transpose() * B), 1e-7);
        EXPECT_EQ(d, geodesic_distance(B, A));
        EXPECT_GE(d, 0.0);
        EXPECT_LE(d, std::numbers::pi);
    }
}

TEST(Project, OrthographicDropsDepth)
{
    const Vertices V = Eigen::Vector3d(1, 2, 3);
    EXPECT_EQ(project({1.0, Eigen::Vector2d::Zero()}, Eigen::Matrix3d::Identity(), V), Eigen::Vector2d(1, 2));
}

TEST(Project, ScaleThenTranslate)
{
    const Vertices V = Eigen::Vector3d(1, 2, 3);
    EXPECT_EQ(project({2.0, Eigen::Vector2d(10, 10)}, Eigen::Matrix3d::Identity(), V), Eigen::Vector2d(12, 14));
}

TEST(Project, RotatesBeforeDropping)
{
    const Vertices V = Eigen::Vector3d(1, 0, 0);
    const Points2 u = project({1.0, Eigen::Vector2d::Zero()}, exp_map(Eigen::Vector3d(0, 0, std::numbers::pi / 2)), V);
    EXPECT_LT((u - Eigen::Vector2d(0, 1)).norm(), 1e-15);
}

TEST(Project, LinearWithoutTranslation)
{
    std::mt19937_64 rng(7);
    const Vertices V1 = Vertices::Random(3, 30), V2 = Vertices::Random(3, 30);
    const Eigen::Matrix3d R = exp_map(oracle::random_rotation_vector(rng, 2.0));
    const WeakPerspectiveCamera cam{1.7, Eigen::Vector2d::Zero()};
    const double a = 0.3, b = -2.1;
    const Points2 lhs = project(cam, R, a * V1 + b * V2);
    const Points2 rhs = a * project(cam, R, V1) + b * project(cam, R, V2);
    EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Project, EquivariantToScale)
{
    const Vertices V = Vertices::Random(3, 25);
    const Eigen::Matrix3d R = exp_map(Eigen::Vector3d(0.2, -0.4, 0.9));
    const Eigen::Vector2d t(5.0, -3.0);
    for (double a : {0.5, 2.0, 4.0, 1024.0}) {
        Points2 expected = a * project({1.0, Eigen::Vector2d::Zero()}, R, V);
        expected.colwise() += t;
        EXPECT_EQ(project({a, t}, R, V), expected);
    }
}

TEST(EstimateScale, UnitTemplateOrthographic)
{
    const TemplateMesh mesh = make_icosphere(2);
    const Points2 u = project({1.0, Eigen::Vector2d::Zero()}, Eigen::Matrix3d::Identity(), mesh.vertices());
    const Weights v = Weights::Ones(u.cols());
    // Spread of the actual projection, computed directly.
    const Eigen::Vector2d mean = u.rowwise().mean();
    const double spread = std::sqrt((u.colwise() - mean).squaredNorm() / (2.0 * static_cast<double>(u.cols())));
    EXPECT_NEAR(estimate_scale(u, v), spread, 1e-12);
    EXPECT_NEAR(estimate_scale(u, v), 1.0, 1e-6);
}

TEST(EstimateScale, Homogeneous)
{
    const Points2 u = Points2::Random(2, 40);
    const Weights v = Weights::Ones(40);
    EXPECT_DOUBLE_EQ(estimate_scale(3.0 * u, v), 3.0 * estimate_scale(u, v));
    EXPECT_EQ(estimate_scale(4.0 * u, v), 4.0 * estimate_scale(u, v));
}

TEST(EstimateScale, DegenerateInputs)
{
    Points2 same(2, 5);
    same.colwise() = Eigen::Vector2d(3, 4);
    EXPECT_THROW(estimate_scale(same, Weights::Ones(5)), DegenerateObservation);
    Weights two = Weights::Zero(5);
    two.head(2).setOnes();
    EXPECT_THROW(estimate_scale(Points2::Random(2, 5), two), DegenerateObservation);
    EXPECT_THROW(estimate_scale(Points2::Random(2, 5), Weights::Ones(4)), DimensionMismatch);
}

TEST(EstimateScale, SimilarityInvariant)
{
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Points2 u = 10.0 * Points2::Random(2, 30);
        Weights v(30);
        for (Eigen::Index i = 0; i < 30; ++i) {
            v(i) = unit(rng);
        }
        v.head(3).setOnes();
        const double a = 6.0 * unit(rng);
        const Eigen::Matrix2d Q = Eigen::Rotation2Dd(a).toRotationMatrix();
        Points2 moved = Q * u;
        moved.colwise() += Eigen::Vector2d(100.0 * unit(rng), -50.0 * unit(rng));
        EXPECT_NEAR(estimate_scale(moved, v), estimate_scale(u, v), 1e-10 * estimate_scale(u, v));
    }
}

TEST(EstimateScale, UniformWeightingIgnoresVisibility)
{
    const Points2 u = Points2::Random(2, 20);
    Weights v = Weights::Ones(20);
    v.head(10).setZero();
    ScaleOptions uniform;
    uniform.weighting = ScaleWeighting::uniform;
    EXPECT_EQ(estimate_scale(u, v, uniform), estimate_scale(u, Weights::Ones(20)));
    EXPECT_NE(estimate_scale(u, v), estimate_scale(u, Weights::Ones(20)));
}

TEST(EstimateScaleGradient, MatchesCentralDifferences)
{
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> unit(0.2, 1.0);
    const Points2 u = 5.0 * Points2::Random(2, 12);
    Weights v(12);
    for (Eigen::Index i = 0; i < 12; ++i) {
        v(i) = unit(rng);
    }
    const ScaleGradient g = estimate_scale_gradient(u, v);
    Eigen::VectorXd x(36);
    x << Eigen::Map<const Eigen::VectorXd>(u.data(), 24), v;
    auto f = [](const Eigen::VectorXd& z) {
        const Points2 uu = Eigen::Map<const Points2>(z.data(), 2, 12);
        return estimate_scale(uu, z.tail(12));
    };
    const Eigen::VectorXd fd = oracle::gradient(f, x, 1e-6);
    Eigen::VectorXd analytic(36);
    analytic << Eigen::Map<const Eigen::VectorXd>(g.d_points.data(), 24), g.d_visibility;
    EXPECT_LT(oracle::relative_error(analytic, fd), 1e-7);
}
