/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/raster.hpp
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
#include "ttp/mesh.hpp"

#include "Eigen/Core"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <string>
#include <vector>

namespace ttp {

struct Resolution
{
    int width = 256;
    int height = 256;
};

/// Binary occupancy image, row-major. Pixel (x, y) has its centre at image coordinates (x, y).
struct SilhouetteMask
{
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    SilhouetteMask() = default;
    SilhouetteMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0) {}

    bool at(int x, int y) const { return bits[index(x, y)] != 0; }
    void set(int x, int y, bool value = true) { bits[index(x, y)] = value ? 1 : 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1})); }
    bool empty() const { return count() == 0; }
    bool operator==(const SilhouetteMask&) const = default;

private:
    std::size_t index(int x, int y) const
    {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
    }
};

/// Depth buffer plus the id of the front-most face per pixel (-1 where nothing is drawn).
struct DepthBuffer
{
    int width = 0;
    int height = 0;
    std::vector<double> depth;
    std::vector<int> face;
};

namespace detail {

inline void check_resolution(const Resolution& res)
{
    if (res.width < 8 || res.height < 8) {
        throw DimensionMismatch("rasterizer resolution must be at least 8x8");
    }
}

// Top-left ownership for an edge of a positively oriented triangle; of the
// two opposite traversals of a shared edge exactly one owns it.
inline bool owns_edge(const Eigen::Vector2d& d)
{
    return d.y() < 0.0 || (d.y() == 0.0 && d.x() > 0.0);
}

/**
 * Scan-converts every face whose index passes `keep`. Pixel centres strictly
 * inside a triangle, or on an owned edge, are covered. Smaller depth wins.
 */
template <class FaceFilter>
DepthBuffer rasterize_depth(const Points2& image, const Eigen::VectorXd& depth, const Faces& faces, const Resolution& res,
                            FaceFilter&& keep)
{
    DepthBuffer buf;
    buf.width = res.width;
    buf.height = res.height;
    buf.depth.assign(static_cast<std::size_t>(res.width) * static_cast<std::size_t>(res.height),
                     std::numeric_limits<double>::infinity());
    buf.face.assign(buf.depth.size(), -1);
    for (Eigen::Index f = 0; f < faces.cols(); ++f) {
        if (!keep(f)) {
            continue;
        }
        int ia = faces(0, f), ib = faces(1, f), ic = faces(2, f);
        Eigen::Vector2d a = image.col(ia), b = image.col(ib), c = image.col(ic);
        double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
        if (area == 0.0 || !std::isfinite(area)) {
            continue;
        }
        if (area < 0.0) {
            std::swap(b, c);
            std::swap(ib, ic);
            area = -area;
        }
        const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({a.x(), b.x(), c.x()}))));
        const int x1 = std::min(res.width - 1, static_cast<int>(std::floor(std::max({a.x(), b.x(), c.x()}))));
        const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y(), b.y(), c.y()}))));
        const int y1 = std::min(res.height - 1, static_cast<int>(std::floor(std::max({a.y(), b.y(), c.y()}))));
        const Eigen::Vector2d e0 = c - b, e1 = a - c, e2 = b - a;
        const bool own0 = owns_edge(e0), own1 = owns_edge(e1), own2 = owns_edge(e2);
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const Eigen::Vector2d p(x, y);
                // Edge functions; w0 is the weight of a, etc.
                const double w0 = e0.x() * (p - b).y() - e0.y() * (p - b).x();
                const double w1 = e1.x() * (p - c).y() - e1.y() * (p - c).x();
                const double w2 = e2.x() * (p - a).y() - e2.y() * (p - a).x();
                if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) {
                    continue;
                }
                if ((w0 == 0.0 && !own0) || (w1 == 0.0 && !own1) || (w2 == 0.0 && !own2)) {
                    continue;
                }
                const double z = (w0 * depth(ia) + w1 * depth(ib) + w2 * depth(ic)) / area;
                const std::size_t k = static_cast<std::size_t>(y) * static_cast<std::size_t>(res.width) + static_cast<std::size_t>(x);
                if (z < buf.depth[k]) {
                    buf.depth[k] = z;
                    buf.face[k] = static_cast<int>(f);
                }
            }
        }
    }
    return buf;
}

inline SilhouetteMask mask_from_depth(const DepthBuffer& buf)
{
    SilhouetteMask mask(buf.width, buf.height);
    for (std::size_t k = 0; k < buf.face.size(); ++k) {
        mask.bits[k] = buf.face[k] >= 0 ? 1 : 0;
    }
    return mask;
}

} // namespace detail

/// Non-differentiable silhouette of the posed mesh under the weak-perspective camera.
inline SilhouetteMask rasterize_silhouette(const Vertices& vertices, const Faces& faces, const WeakPerspectiveCamera& camera,
                                           const Eigen::Matrix3d& R, const Resolution& res = {})
{
    detail::check_resolution(res);
    const Points2 image = project(camera, R, vertices);
    const Eigen::VectorXd depth = (R.row(2) * vertices).transpose();
    return detail::mask_from_depth(detail::rasterize_depth(image, depth, faces, res, [](Eigen::Index) { return true; }));
}

/// Camera-frame depth buffer of the posed mesh (smaller depth is closer).
inline DepthBuffer render_depth(const Vertices& vertices, const Faces& faces, const WeakPerspectiveCamera& camera,
                                const Eigen::Matrix3d& R, const Resolution& res = {})
{
    detail::check_resolution(res);
    const Points2 image = project(camera, R, vertices);
    const Eigen::VectorXd depth = (R.row(2) * vertices).transpose();
    return detail::rasterize_depth(image, depth, faces, res, [](Eigen::Index) { return true; });
}

/**
 * Binary per-vertex visibility from the z-buffer. A vertex is visible when its
 * depth is within eps_z = 1e-3 * (bounding-box diagonal) of the front-most
 * surface at its pixel; that surface's depth is evaluated on the plane of the
 * winning face at the vertex's exact image position so that sub-pixel offsets
 * do not count as occlusion. Vertices projecting outside the frame get 0.
 */
inline Weights render_visibility(const Vertices& vertices, const Faces& faces, const WeakPerspectiveCamera& camera,
                                 const Eigen::Matrix3d& R, const Resolution& res = {})
{
    detail::check_resolution(res);
    const Points2 image = project(camera, R, vertices);
    const Eigen::VectorXd depth = (R.row(2) * vertices).transpose();
    const DepthBuffer buf = detail::rasterize_depth(image, depth, faces, res, [](Eigen::Index) { return true; });
    const double diagonal = vertices.cols() > 0 ? (vertices.rowwise().maxCoeff() - vertices.rowwise().minCoeff()).norm() : 0.0;
    const double eps = 1e-3 * diagonal;

    Weights vis = Weights::Zero(vertices.cols());
    for (Eigen::Index i = 0; i < vertices.cols(); ++i) {
        const Eigen::Vector2d p = image.col(i);
        const double px = std::round(p.x());
        const double py = std::round(p.y());
        if (!(px >= 0.0 && px < res.width && py >= 0.0 && py < res.height)) {
            continue;
        }
        const std::size_t k = static_cast<std::size_t>(py) * static_cast<std::size_t>(res.width) + static_cast<std::size_t>(px);
        const int f = buf.face[k];
        if (f < 0) {
            vis(i) = 1.0;
            continue;
        }
        const Eigen::Vector2d a = image.col(faces(0, f)), b = image.col(faces(1, f)), c = image.col(faces(2, f));
        const double area = (b - a).x() * (c - a).y() - (b - a).y() * (c - a).x();
        const double wa = ((c - b).x() * (p - b).y() - (c - b).y() * (p - b).x()) / area;
        const double wb = ((a - c).x() * (p - c).y() - (a - c).y() * (p - c).x()) / area;
        const double wc = 1.0 - wa - wb;
        const double surface = wa * depth(faces(0, f)) + wb * depth(faces(1, f)) + wc * depth(faces(2, f));
        vis(i) = depth(i) <= surface + eps ? 1.0 : 0.0;
    }
    return vis;
}

/// Binary PGM (P5), 255 for set pixels.
inline std::string write_pgm(const SilhouetteMask& mask)
{
    std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
    out.reserve(out.size() + mask.bits.size());
    for (const auto b : mask.bits) {
        out.push_back(b ? static_cast<char>(255) : static_cast<char>(0));
    }
    return out;
}

/// Reads a P5 PGM with maxval <= 255; pixels above half the maxval are set.
inline SilhouetteMask read_pgm(std::istream& in)
{
    auto token = [&in]() {
        std::string t;
        char ch = 0;
        while (in.get(ch)) {
            if (ch == '#') {
                std::string skip;
                std::getline(in, skip);
                continue;
            }
            if (std::isspace(static_cast<unsigned char>(ch))) {
                if (!t.empty()) {
                    break;
                }
                continue;
            }
            t.push_back(ch);
        }
        return t;
    };
    if (token() != "P5") {
        throw ParseError(0, "not a binary PGM (P5) file");
    }
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        maxval = std::stoi(token());
    } catch (const std::exception&) {
        throw ParseError(0, "malformed PGM header");
    }
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
        throw ParseError(0, "unsupported PGM dimensions or maxval");
    }
    SilhouetteMask mask(w, h);
    std::vector<char> raw(mask.bits.size());
    if (!in.read(raw.data(), static_cast<std::streamsize>(raw.size()))) {
        throw ParseError(0, "truncated PGM pixel data");
    }
    for (std::size_t k = 0; k < raw.size(); ++k) {
        mask.bits[k] = static_cast<unsigned char>(raw[k]) * 2 > maxval ? 1 : 0;
    }
    return mask;
}

} // namespace ttp
