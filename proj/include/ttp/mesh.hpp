/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/mesh.hpp
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

#include "Eigen/Core"
#include "Eigen/Geometry"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace ttp {

using Faces = Eigen::Matrix3Xi; ///< One column of vertex indices per triangle.

struct MeshOptions
{
    bool normalize = true;              ///< zero centroid, unit per-coordinate RMS radius
    bool clamp_negative_weights = true; ///< obtuse-angle cotangent weights clipped at 0
};

/// Undirected edge (i < j) with its cotangent weight.
struct EdgeWeight
{
    int i;
    int j;
    double weight;
};

/**
 * Cotangent weights w_ij = 1/2 sum over the faces containing edge (i, j) of
 * cot(angle opposite the edge). Edges are returned sorted by (i, j).
 * Throws TopologyError if an edge is shared by more than two faces.
 */
inline std::vector<EdgeWeight> cotangent_weights(const Vertices& vertices, const Faces& faces, bool clamp_negative = true)
{
    std::map<std::pair<int, int>, std::pair<double, int>> acc; // weight, face count
    for (Eigen::Index f = 0; f < faces.cols(); ++f) {
        for (int corner = 0; corner < 3; ++corner) {
            const int o = faces(corner, f);
            const int a = faces((corner + 1) % 3, f);
            const int b = faces((corner + 2) % 3, f);
            const Eigen::Vector3d ea = vertices.col(a) - vertices.col(o);
            const Eigen::Vector3d eb = vertices.col(b) - vertices.col(o);
            const double sine = ea.cross(eb).norm();
            const double cot = sine > 0.0 ? ea.dot(eb) / sine : 0.0;
            auto& entry = acc[{std::min(a, b), std::max(a, b)}];
            entry.first += 0.5 * cot;
            entry.second += 1;
        }
    }
    std::vector<EdgeWeight> out;
    out.reserve(acc.size());
    for (const auto& [key, value] : acc) {
        if (value.second > 2) {
            throw TopologyError("edge (" + std::to_string(key.first) + ", " + std::to_string(key.second)
                                + ") is shared by " + std::to_string(value.second) + " faces");
        }
        const double w = clamp_negative ? std::max(0.0, value.first) : value.first;
        out.push_back({key.first, key.second, w});
    }
    return out;
}

/// Zero centroid and unit per-coordinate RMS radius. Already-normalised input is returned unchanged.
inline Vertices normalize_vertices(const Vertices& vertices)
{
    Vertices out = vertices;
    if (out.cols() == 0) {
        return out;
    }
    const Eigen::Vector3d centroid = out.rowwise().mean();
    if (centroid.cwiseAbs().maxCoeff() > 1e-12) {
        out.colwise() -= centroid;
    }
    const double rms = std::sqrt(out.squaredNorm() / (3.0 * static_cast<double>(out.cols())));
    if (rms > 0.0 && std::abs(rms - 1.0) > 1e-12) {
        out /= rms;
    }
    return out;
}

class TemplateMesh
{
public:
    TemplateMesh() = default;

    /// Validates topology, optionally normalises, and builds adjacency and cotangent weights.
    static TemplateMesh from_arrays(const Vertices& vertices, const Faces& faces, const MeshOptions& options = {})
    {
        const auto n = vertices.cols();
        if (!vertices.allFinite()) {
            throw TopologyError("mesh has non-finite vertex coordinates");
        }
        for (Eigen::Index f = 0; f < faces.cols(); ++f) {
            for (int c = 0; c < 3; ++c) {
                if (faces(c, f) < 0 || faces(c, f) >= n) {
                    throw TopologyError("face " + std::to_string(f) + " references vertex "
                                        + std::to_string(faces(c, f)) + " outside [0, " + std::to_string(n) + ")");
                }
            }
            if (faces(0, f) == faces(1, f) || faces(1, f) == faces(2, f) || faces(0, f) == faces(2, f)) {
                throw TopologyError("face " + std::to_string(f) + " is degenerate (repeated vertex index)");
            }
        }
        TemplateMesh mesh;
        mesh.vertices_ = options.normalize ? normalize_vertices(vertices) : vertices;
        mesh.faces_ = faces;
        mesh.edges_ = cotangent_weights(mesh.vertices_, faces, options.clamp_negative_weights);
        mesh.neighbors_.assign(static_cast<std::size_t>(n), {});
        mesh.neighbor_weights_.assign(static_cast<std::size_t>(n), {});
        // edges_ is sorted by (i, j), so each neighbour list comes out sorted
        // once the lower-index entries are merged in front.
        std::vector<std::vector<std::pair<int, double>>> adj(static_cast<std::size_t>(n));
        for (const auto& e : mesh.edges_) {
            adj[static_cast<std::size_t>(e.i)].push_back({e.j, e.weight});
            adj[static_cast<std::size_t>(e.j)].push_back({e.i, e.weight});
        }
        for (std::size_t i = 0; i < adj.size(); ++i) {
            std::sort(adj[i].begin(), adj[i].end());
            for (const auto& [j, w] : adj[i]) {
                mesh.neighbors_[i].push_back(j);
                mesh.neighbor_weights_[i].push_back(w);
            }
        }
        return mesh;
    }

    Eigen::Index size() const noexcept { return vertices_.cols(); }
    const Vertices& vertices() const noexcept { return vertices_; }
    const Faces& faces() const noexcept { return faces_; }
    const std::vector<EdgeWeight>& edges() const noexcept { return edges_; }
    /// Sorted neighbour indices of every vertex.
    const std::vector<std::vector<int>>& neighbors() const noexcept { return neighbors_; }
    /// Cotangent weights aligned with neighbors().
    const std::vector<std::vector<double>>& neighbor_weights() const noexcept { return neighbor_weights_; }

private:
    Vertices vertices_;
    Faces faces_;
    std::vector<EdgeWeight> edges_;
    std::vector<std::vector<int>> neighbors_;
    std::vector<std::vector<double>> neighbor_weights_;
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_ws(std::string_view s)
{
    std::vector<std::string_view> tokens;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const auto start = s.find_first_not_of(" \t\r", pos);
        if (start == std::string_view::npos) {
            break;
        }
        const auto end = s.find_first_of(" \t\r", start);
        tokens.push_back(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
        pos = end == std::string_view::npos ? s.size() : end;
    }
    return tokens;
}

inline double parse_double(std::string_view token, std::size_t line)
{
    double value = 0.0;
    const auto* end = token.data() + token.size();
    const auto res = std::from_chars(token.data(), end, value);
    if (res.ec != std::errc() || res.ptr != end || !std::isfinite(value)) {
        throw ParseError(line, "invalid number '" + std::string(token) + "'");
    }
    return value;
}

inline long parse_index(std::string_view token, std::size_t line)
{
    // Only the position index is used; "a/b/c" texture and normal suffixes are ignored.
    const auto slash = token.find('/');
    const auto head = token.substr(0, slash);
    long value = 0;
    const auto* end = head.data() + head.size();
    const auto res = std::from_chars(head.data(), end, value);
    if (head.empty() || res.ec != std::errc() || res.ptr != end) {
        throw ParseError(line, "invalid face index '" + std::string(token) + "'");
    }
    return value;
}

} // namespace detail

/**
 * Reads the `v x y z` and `f a b c` subset of Wavefront OBJ. Face indices are
 * 1-based (negative indices count back from the last vertex); polygons with
 * more than three corners are fan-triangulated. Other statements are ignored.
 */
inline TemplateMesh load_obj(std::istream& in, const MeshOptions& options = {})
{
    std::vector<Eigen::Vector3d> verts;
    std::vector<std::pair<Eigen::Vector3i, std::size_t>> tris; // face and source line
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = detail::trim(raw);
        if (const auto hash = line.find('#'); hash != std::string_view::npos) {
            line = detail::trim(line.substr(0, hash));
        }
        if (line.empty()) {
            continue;
        }
        const auto tokens = detail::split_ws(line);
        if (tokens[0] == "v") {
            if (tokens.size() < 4 || tokens.size() > 5) {
                throw ParseError(line_no, "vertex line needs 3 coordinates");
            }
            verts.emplace_back(detail::parse_double(tokens[1], line_no), detail::parse_double(tokens[2], line_no),
                               detail::parse_double(tokens[3], line_no));
        } else if (tokens[0] == "f") {
            if (tokens.size() < 4) {
                throw ParseError(line_no, "face line needs at least 3 indices");
            }
            std::vector<int> idx;
            for (std::size_t k = 1; k < tokens.size(); ++k) {
                const long raw_index = detail::parse_index(tokens[k], line_no);
                const long resolved = raw_index > 0 ? raw_index - 1 : static_cast<long>(verts.size()) + raw_index;
                if (raw_index == 0) {
                    throw ParseError(line_no, "face index 0 is invalid in 1-based OBJ");
                }
                idx.push_back(static_cast<int>(resolved));
            }
            for (std::size_t k = 1; k + 1 < idx.size(); ++k) {
                tris.push_back({Eigen::Vector3i(idx[0], idx[k], idx[k + 1]), line_no});
            }
        }
    }
    Vertices vertices(3, static_cast<Eigen::Index>(verts.size()));
    for (std::size_t i = 0; i < verts.size(); ++i) {
        vertices.col(static_cast<Eigen::Index>(i)) = verts[i];
    }
    Faces faces(3, static_cast<Eigen::Index>(tris.size()));
    for (std::size_t f = 0; f < tris.size(); ++f) {
        const auto& [tri, line] = tris[f];
        for (int c = 0; c < 3; ++c) {
            if (tri(c) < 0 || tri(c) >= vertices.cols()) {
                throw TopologyError("line " + std::to_string(line) + ": face index out of range");
            }
        }
        if (tri(0) == tri(1) || tri(1) == tri(2) || tri(0) == tri(2)) {
            throw TopologyError("line " + std::to_string(line) + ": degenerate face (repeated vertex index)");
        }
        faces.col(static_cast<Eigen::Index>(f)) = tri;
    }
    return TemplateMesh::from_arrays(vertices, faces, options);
}

inline TemplateMesh load_obj_string(const std::string& text, const MeshOptions& options = {})
{
    std::istringstream in(text);
    return load_obj(in, options);
}

inline std::string write_obj(const Vertices& vertices, const Faces& faces)
{
    std::string out;
    char buf[128];
    for (Eigen::Index i = 0; i < vertices.cols(); ++i) {
        std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", vertices(0, i), vertices(1, i), vertices(2, i));
        out += buf;
    }
    for (Eigen::Index f = 0; f < faces.cols(); ++f) {
        std::snprintf(buf, sizeof(buf), "f %d %d %d\n", faces(0, f) + 1, faces(1, f) + 1, faces(2, f) + 1);
        out += buf;
    }
    return out;
}

/// Area-weighted vertex normals; assumes consistently oriented faces.
inline Vertices vertex_normals(const Vertices& vertices, const Faces& faces)
{
    Vertices normals = Vertices::Zero(3, vertices.cols());
    for (Eigen::Index f = 0; f < faces.cols(); ++f) {
        const Eigen::Vector3d a = vertices.col(faces(0, f));
        const Eigen::Vector3d n = (vertices.col(faces(1, f)) - a).cross(vertices.col(faces(2, f)) - a);
        for (int c = 0; c < 3; ++c) {
            normals.col(faces(c, f)) += n;
        }
    }
    for (Eigen::Index i = 0; i < normals.cols(); ++i) {
        const double len = normals.col(i).norm();
        if (len > 0.0) {
            normals.col(i) /= len;
        }
    }
    return normals;
}

// Built-in meshes. All faces are oriented counter-clockwise seen from outside.

inline TemplateMesh make_tetrahedron(const MeshOptions& options = {})
{
    Vertices v(3, 4);
    v << 1, 1, -1, -1,
         1, -1, 1, -1,
         1, -1, -1, 1;
    Faces f(3, 4);
    f << 0, 0, 0, 1,
         1, 2, 3, 3,
         2, 3, 1, 2;
    return TemplateMesh::from_arrays(v, f, options);
}

inline TemplateMesh make_icosphere(int subdivisions, const MeshOptions& options = {})
{
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Eigen::Vector3d> verts = {
        {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
        {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
        {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
    for (auto& p : verts) {
        p.normalize();
    }
    std::vector<Eigen::Vector3i> tris = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
        {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
        {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
    for (int level = 0; level < subdivisions; ++level) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::make_pair(std::min(a, b), std::max(a, b));
            if (const auto it = midpoint.find(key); it != midpoint.end()) {
                return it->second;
            }
            verts.push_back((verts[static_cast<std::size_t>(a)] + verts[static_cast<std::size_t>(b)]).normalized());
            const int id = static_cast<int>(verts.size()) - 1;
            midpoint.emplace(key, id);
            return id;
        };
        std::vector<Eigen::Vector3i> next;
        next.reserve(tris.size() * 4);
        for (const auto& t : tris) {
            const int ab = mid(t(0), t(1));
            const int bc = mid(t(1), t(2));
            const int ca = mid(t(2), t(0));
            next.emplace_back(t(0), ab, ca);
            next.emplace_back(t(1), bc, ab);
            next.emplace_back(t(2), ca, bc);
            next.emplace_back(ab, bc, ca);
        }
        tris = std::move(next);
    }
    Vertices v(3, static_cast<Eigen::Index>(verts.size()));
    for (std::size_t i = 0; i < verts.size(); ++i) {
        v.col(static_cast<Eigen::Index>(i)) = verts[i];
    }
    Faces f(3, static_cast<Eigen::Index>(tris.size()));
    for (std::size_t i = 0; i < tris.size(); ++i) {
        f.col(static_cast<Eigen::Index>(i)) = tris[i];
    }
    return TemplateMesh::from_arrays(v, f, options);
}

namespace detail {

// Incremental convex hull of points that all lie on the hull (points on a
// sphere around the origin). Faces are oriented outward.
inline Faces sphere_hull(const std::vector<Eigen::Vector3d>& pts)
{
    std::vector<Eigen::Vector3i> faces;
    auto orient = [&](int a, int b, int c) {
        const Eigen::Vector3d n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
        return n.dot(pts[a]) >= 0.0 ? Eigen::Vector3i(a, b, c) : Eigen::Vector3i(a, c, b);
    };
    // Seed with a non-degenerate tetrahedron: first point, farthest point, a
    // point far from their line, and a point far from that plane.
    const int n = static_cast<int>(pts.size());
    int p0 = 0, p1 = 1, p2 = -1, p3 = -1;
    double best = -1.0;
    for (int i = 1; i < n; ++i) {
        const double d = (pts[i] - pts[p0]).squaredNorm();
        if (d > best) {
            best = d;
            p1 = i;
        }
    }
    best = -1.0;
    for (int i = 0; i < n; ++i) {
        const double d = (pts[i] - pts[p0]).cross(pts[p1] - pts[p0]).squaredNorm();
        if (d > best && i != p0 && i != p1) {
            best = d;
            p2 = i;
        }
    }
    best = -1.0;
    const Eigen::Vector3d seed_normal = (pts[p1] - pts[p0]).cross(pts[p2] - pts[p0]);
    for (int i = 0; i < n; ++i) {
        const double d = std::abs(seed_normal.dot(pts[i] - pts[p0]));
        if (d > best && i != p0 && i != p1 && i != p2) {
            best = d;
            p3 = i;
        }
    }
    const Eigen::Vector3d inside = (pts[p0] + pts[p1] + pts[p2] + pts[p3]) / 4.0;
    auto orient_from = [&](int a, int b, int c) {
        const Eigen::Vector3d nrm = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
        return nrm.dot(pts[a] - inside) >= 0.0 ? Eigen::Vector3i(a, b, c) : Eigen::Vector3i(a, c, b);
    };
    faces = {orient_from(p0, p1, p2), orient_from(p0, p1, p3), orient_from(p0, p2, p3), orient_from(p1, p2, p3)};
    for (int p = 0; p < n; ++p) {
        if (p == p0 || p == p1 || p == p2 || p == p3) {
            continue;
        }
        std::vector<char> visible(faces.size(), 0);
        bool any = false;
        for (std::size_t f = 0; f < faces.size(); ++f) {
            const auto& t = faces[f];
            const Eigen::Vector3d nrm = (pts[t(1)] - pts[t(0)]).cross(pts[t(2)] - pts[t(0)]);
            if (nrm.dot(pts[p] - pts[t(0)]) > 1e-14 * nrm.norm()) {
                visible[f] = 1;
                any = true;
            }
        }
        if (!any) {
            continue;
        }
        std::map<std::pair<int, int>, int> directed; // edge -> visibility of owning face
        for (std::size_t f = 0; f < faces.size(); ++f) {
            for (int c = 0; c < 3; ++c) {
                directed[{faces[f](c), faces[f]((c + 1) % 3)}] = visible[f];
            }
        }
        std::vector<Eigen::Vector3i> kept;
        for (std::size_t f = 0; f < faces.size(); ++f) {
            if (!visible[f]) {
                kept.push_back(faces[f]);
                continue;
            }
            for (int c = 0; c < 3; ++c) {
                const int a = faces[f](c);
                const int b = faces[f]((c + 1) % 3);
                const auto twin = directed.find({b, a});
                if (twin != directed.end() && !twin->second) {
                    kept.emplace_back(a, b, p);
                }
            }
        }
        faces = std::move(kept);
    }
    Faces out(3, static_cast<Eigen::Index>(faces.size()));
    for (std::size_t f = 0; f < faces.size(); ++f) {
        out.col(static_cast<Eigen::Index>(f)) = orient(faces[f](0), faces[f](1), faces[f](2));
    }
    return out;
}

} // namespace detail

/// Triangulated sphere with exactly `count` vertices on a Fibonacci lattice (count >= 4).
inline TemplateMesh make_fibonacci_sphere(int count, const MeshOptions& options = {})
{
    if (count < 4) {
        throw TopologyError("sphere mesh needs at least 4 vertices");
    }
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    std::vector<Eigen::Vector3d> pts(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double z = 1.0 - (2.0 * i + 1.0) / count;
        const double radius = std::sqrt(1.0 - z * z);
        const double angle = golden * i;
        pts[static_cast<std::size_t>(i)] = {radius * std::cos(angle), radius * std::sin(angle), z};
    }
    Vertices v(3, count);
    for (int i = 0; i < count; ++i) {
        v.col(i) = pts[static_cast<std::size_t>(i)];
    }
    return TemplateMesh::from_arrays(v, detail::sphere_hull(pts), options);
}

/// Flat (w x h)-vertex grid in the z = 0 plane, two triangles per cell.
inline TemplateMesh make_grid(int width, int height, const MeshOptions& options = {})
{
    if (width < 2 || height < 2) {
        throw TopologyError("grid mesh needs at least 2x2 vertices");
    }
    Vertices v(3, width * height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            v.col(y * width + x) = Eigen::Vector3d(x, y, 0.0);
        }
    }
    Faces f(3, 2 * (width - 1) * (height - 1));
    int k = 0;
    for (int y = 0; y + 1 < height; ++y) {
        for (int x = 0; x + 1 < width; ++x) {
            const int a = y * width + x;
            f.col(k++) = Eigen::Vector3i(a, a + 1, a + width + 1);
            f.col(k++) = Eigen::Vector3i(a, a + width + 1, a + width);
        }
    }
    return TemplateMesh::from_arrays(v, f, options);
}

/**
 * Built-in mesh by name: "tetra", "icosphere(L)" (L subdivision levels),
 * "sphere(N)" (N-vertex Fibonacci sphere), "grid(W,H)". A colon form such as
 * "icosphere:2" or "grid:10x10" is accepted as well. Returns false if `name`
 * is not a built-in.
 */
inline bool make_builtin_mesh(const std::string& name, TemplateMesh& out, const MeshOptions& options = {})
{
    std::string kind = name;
    std::vector<int> args;
    const auto open = name.find_first_of("(:");
    if (open != std::string::npos) {
        kind = name.substr(0, open);
        std::string rest = name.substr(open + 1);
        if (!rest.empty() && rest.back() == ')') {
            rest.pop_back();
        }
        for (char& ch : rest) {
            if (ch == ',' || ch == 'x') {
                ch = ' ';
            }
        }
        std::istringstream in(rest);
        int value = 0;
        while (in >> value) {
            args.push_back(value);
        }
        if (!in.eof()) {
            return false;
        }
    }
    if (kind == "tetra" && args.empty()) {
        out = make_tetrahedron(options);
    } else if (kind == "icosphere" && args.size() == 1) {
        out = make_icosphere(args[0], options);
    } else if (kind == "sphere" && args.size() == 1) {
        out = make_fibonacci_sphere(args[0], options);
    } else if (kind == "grid" && args.size() == 2) {
        out = make_grid(args[0], args[1], options);
    } else {
        return false;
    }
    return true;
}

} // namespace ttp
