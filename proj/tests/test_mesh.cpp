/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: tests/test_mesh.cpp
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

#include "ttp/mesh.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <set>

using namespace ttp;

namespace {

const char* const kTetraObj = R"(# unit tetrahedron
v 0 0 0
v 1 0 0
v 0 1 0
v 0 0 1
f 1 3 2
f 1 2 4
f 1 4 3
f 2 3 4
)";

void expect_symmetric_adjacency(const TemplateMesh& mesh)
{
    for (Eigen::Index i = 0; i < mesh.size(); ++i) {
        const auto& nbr = mesh.neighbors()[static_cast<std::size_t>(i)];
        EXPECT_TRUE(std::is_sorted(nbr.begin(), nbr.end()));
        for (std::size_t m = 0; m < nbr.size(); ++m) {
            const auto& back = mesh.neighbors()[static_cast<std::size_t>(nbr[m])];
            const auto it = std::find(back.begin(), back.end(), static_cast<int>(i));
            ASSERT_NE(it, back.end());
            const auto pos = static_cast<std::size_t>(it - back.begin());
            EXPECT_EQ(mesh.neighbor_weights()[static_cast<std::size_t>(nbr[m])][pos],
                      mesh.neighbor_weights()[static_cast<std::size_t>(i)][m]);
        }
    }
}

} // namespace

TEST(LoadObj, Tetrahedron)
{
    const TemplateMesh mesh = load_obj_string(kTetraObj);
    EXPECT_EQ(mesh.size(), 4);
    EXPECT_EQ(mesh.faces().cols(), 4);
    for (const auto& nbr : mesh.neighbors()) {
        EXPECT_EQ(nbr.size(), 3u);
    }
    expect_symmetric_adjacency(mesh);
}

TEST(LoadObj, NormalisesToUnitRms)
{
    const TemplateMesh mesh = load_obj_string(kTetraObj);
    const Vertices& V = mesh.vertices();
    EXPECT_LT(V.rowwise().mean().cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_NEAR(std::sqrt(V.squaredNorm() / (3.0 * static_cast<double>(V.cols()))), 1.0, 1e-10);
}

TEST(LoadObj, SlashSuffixesCommentsAndQuads)
{
    const TemplateMesh mesh = load_obj_string("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\n"
                                              "f 1/1/1 2/2/1 3/3/1 4/4/1 # quad\n");
    EXPECT_EQ(mesh.faces().cols(), 2);
}

TEST(LoadObj, RepeatedIndexIsTopologyError)
{
    EXPECT_THROW(load_obj_string("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\n"), TopologyError);
}

TEST(LoadObj, IndexOutOfRangeIsTopologyError)
{
    EXPECT_THROW(load_obj_string("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n"), TopologyError);
}

TEST(LoadObj, MalformedLineReportsLineNumber)
{
    try {
        load_obj_string("v 0 0 0\nv 1 0 0\nv 0 abc 0\nf 1 2 3\n");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3u);
    }
    EXPECT_THROW(load_obj_string("v 0 0\n"), ParseError);
    EXPECT_THROW(load_obj_string("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2\n"), ParseError);
    EXPECT_THROW(load_obj_string("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n"), ParseError);
}

TEST(LoadObj, WriteRoundTrip)
{
    const TemplateMesh mesh = make_icosphere(1);
    const TemplateMesh again = load_obj_string(write_obj(mesh.vertices(), mesh.faces()));
    EXPECT_EQ(again.vertices(), mesh.vertices());
    EXPECT_EQ(again.faces(), mesh.faces());
}

TEST(Normalize, Idempotent)
{
    Vertices V = Vertices::Random(3, 57);
    V.row(0) *= 10.0;
    V.colwise() += Eigen::Vector3d(5, -3, 2);
    const Vertices once = normalize_vertices(V);
    EXPECT_EQ(normalize_vertices(once), once);
}

TEST(CotangentWeights, RightIsoscelesHypotenuseIsZero)
{
    Vertices V(3, 3);
    V << 0, 1, 0,
         0, 0, 1,
         0, 0, 0;
    Faces F(3, 1);
    F << 0, 1, 2;
    const auto w = cotangent_weights(V, F, false);
    for (const auto& e : w) {
        if (e.i == 1 && e.j == 2) {
            EXPECT_NEAR(e.weight, 0.0, 1e-16);
        } else {
            EXPECT_NEAR(e.weight, 0.5, 1e-15);
        }
    }
}

TEST(CotangentWeights, Equilateral)
{
    Vertices V(3, 3);
    V << 0, 1, 0.5,
         0, 0, std::sqrt(3.0) / 2,
         0, 0, 0;
    Faces F(3, 1);
    F << 0, 1, 2;
    const auto w = cotangent_weights(V, F);
    ASSERT_EQ(w.size(), 3u);
    for (const auto& e : w) {
        EXPECT_NEAR(e.weight, 0.5 / std::sqrt(3.0), 1e-15);
    }
}

TEST(CotangentWeights, IcosahedronEdgesEqualAndMatchAngleOracle)
{
    const TemplateMesh mesh = make_icosphere(0);
    ASSERT_EQ(mesh.size(), 12);
    ASSERT_EQ(mesh.edges().size(), 30u);
    // Two equilateral faces per edge: 2 * 1/2 * cot(60 deg).
    for (const auto& e : mesh.edges()) {
        EXPECT_NEAR(e.weight, 1.0 / std::sqrt(3.0), 1e-12);
        EXPECT_NEAR(e.weight, oracle::cotangent_weight(mesh.vertices(), mesh.faces(), e.i, e.j), 1e-12);
    }
}

TEST(CotangentWeights, MatchesOracleOnIrregularMesh)
{
    const TemplateMesh mesh = make_fibonacci_sphere(60, {true, false});
    for (const auto& e : mesh.edges()) {
        EXPECT_NEAR(e.weight, oracle::cotangent_weight(mesh.vertices(), mesh.faces(), e.i, e.j), 1e-10);
    }
}

TEST(CotangentWeights, ObtuseClampedAtZero)
{
    Vertices V(3, 3);
    V << 0, 4, 2,
         0, 0, 0.2,
         0, 0, 0;
    Faces F(3, 1);
    F << 0, 1, 2;
    const auto clamped = cotangent_weights(V, F, true);
    const auto raw = cotangent_weights(V, F, false);
    for (std::size_t k = 0; k < raw.size(); ++k) {
        EXPECT_EQ(clamped[k].weight, std::max(0.0, raw[k].weight));
        EXPECT_GE(clamped[k].weight, 0.0);
    }
    EXPECT_LT(std::min({raw[0].weight, raw[1].weight, raw[2].weight}), 0.0);
}

TEST(CotangentWeights, EdgeInThreeFacesIsTopologyError)
{
    Vertices V = Vertices::Random(3, 5);
    Faces F(3, 3);
    F << 0, 0, 0,
         1, 1, 1,
         2, 3, 4;
    EXPECT_THROW(cotangent_weights(V, F), TopologyError);
    EXPECT_THROW(TemplateMesh::from_arrays(V, F), TopologyError);
}

TEST(TemplateMesh, BuiltinsAreValid)
{
    for (const char* name : {"tetra", "icosphere(2)", "sphere(200)", "grid(10,10)", "grid:4x3"}) {
        TemplateMesh mesh;
        ASSERT_TRUE(make_builtin_mesh(name, mesh)) << name;
        const Vertices& V = mesh.vertices();
        EXPECT_LT(V.rowwise().mean().cwiseAbs().maxCoeff(), 1e-10) << name;
        EXPECT_NEAR(std::sqrt(V.squaredNorm() / (3.0 * static_cast<double>(V.cols()))), 1.0, 1e-10) << name;
        expect_symmetric_adjacency(mesh);
    }
    TemplateMesh mesh;
    EXPECT_FALSE(make_builtin_mesh("cube", mesh));
    EXPECT_FALSE(make_builtin_mesh("sphere(x)", mesh));
}

TEST(TemplateMesh, FibonacciSphereIsClosedSurface)
{
    const TemplateMesh mesh = make_fibonacci_sphere(200);
    EXPECT_EQ(mesh.size(), 200);
    // Euler characteristic of a sphere: V - E + F = 2, every edge in two faces.
    EXPECT_EQ(mesh.faces().cols(), 2 * 200 - 4);
    EXPECT_EQ(static_cast<long>(mesh.edges().size()), 3 * 200 - 6);
}

TEST(TemplateMesh, IcosphereVertexCounts)
{
    EXPECT_EQ(make_icosphere(1).size(), 42);
    EXPECT_EQ(make_icosphere(2).size(), 162);
    EXPECT_EQ(make_icosphere(3).size(), 642);
}

TEST(TemplateMesh, OutwardNormals)
{
    const TemplateMesh mesh = make_icosphere(2);
    const Vertices N = vertex_normals(mesh.vertices(), mesh.faces());
    for (Eigen::Index i = 0; i < mesh.size(); ++i) {
        EXPECT_GT(N.col(i).dot(mesh.vertices().col(i)), 0.0);
    }
}
