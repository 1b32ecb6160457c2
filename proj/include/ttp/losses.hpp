/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/losses.hpp
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
#include "ttp/raster.hpp"

#include "Eigen/Core"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace ttp {

/**
 * Euclidean distance (in pixels) from every pixel centre to the nearest set
 * pixel of a mask; 0 on the mask. Sub-pixel queries interpolate bilinearly.
 */
class DistanceField
{
public:
    DistanceField() = default;
    DistanceField(int width, int height, std::vector<double> distances)
        : width_(width), height_(height), d_(std::move(distances))
    {
    }

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    double at(int x, int y) const { return d_[static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)]; }
    const std::vector<double>& values() const noexcept { return d_; }

    /// Bilinear lookup at image position p. Outside the grid the distance to the
    /// clamped position is added, which keeps the field 1-Lipschitz.
    double sample(const Eigen::Vector2d& p) const
    {
        const double cx = std::clamp(p.x(), 0.0, static_cast<double>(width_ - 1));
        const double cy = std::clamp(p.y(), 0.0, static_cast<double>(height_ - 1));
        const double outside = std::hypot(p.x() - cx, p.y() - cy);
        const int x0 = std::min(static_cast<int>(std::floor(cx)), std::max(0, width_ - 2));
        const int y0 = std::min(static_cast<int>(std::floor(cy)), std::max(0, height_ - 2));
        const int x1 = std::min(x0 + 1, width_ - 1);
        const int y1 = std::min(y0 + 1, height_ - 1);
        const double fx = cx - x0;
        const double fy = cy - y0;
        const double value = (1.0 - fx) * (1.0 - fy) * at(x0, y0) + fx * (1.0 - fy) * at(x1, y0)
                             + (1.0 - fx) * fy * at(x0, y1) + fx * fy * at(x1, y1);
        return value + outside;
    }

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> d_;
};

namespace detail {

// Squared distance transform of a sampled function in 1D (lower envelope of
// parabolas). Infinite samples contribute no parabola.
inline void edt_1d(const std::vector<double>& f, std::vector<double>& out, std::vector<int>& v, std::vector<double>& z)
{
    const int n = static_cast<int>(f.size());
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (!std::isfinite(f[static_cast<std::size_t>(q)])) {
            continue;
        }
        const double fq = f[static_cast<std::size_t>(q)] + static_cast<double>(q) * q;
        double s = -std::numeric_limits<double>::infinity();
        while (k >= 0) {
            const int p = v[static_cast<std::size_t>(k)];
            s = (fq - (f[static_cast<std::size_t>(p)] + static_cast<double>(p) * p)) / (2.0 * (q - p));
            if (s > z[static_cast<std::size_t>(k)]) {
                break;
            }
            --k;
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = k == 0 ? -std::numeric_limits<double>::infinity() : s;
    }
    if (k < 0) {
        std::fill(out.begin(), out.end(), std::numeric_limits<double>::infinity());
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (j < k && z[static_cast<std::size_t>(j + 1)] < q) {
            ++j;
        }
        const int p = v[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(q)] = static_cast<double>(q - p) * (q - p) + f[static_cast<std::size_t>(p)];
    }
}

} // namespace detail

/// Exact Euclidean distance transform (separable lower-envelope algorithm).
inline DistanceField build_distance_field(const SilhouetteMask& mask)
{
    if (mask.empty()) {
        throw EmptyMask("distance field of an empty mask");
    }
    const int W = mask.width;
    const int H = mask.height;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> sq(static_cast<std::size_t>(W) * static_cast<std::size_t>(H));
    const int longest = std::max(W, H);
    std::vector<double> f(static_cast<std::size_t>(longest)), out(static_cast<std::size_t>(longest)), z(static_cast<std::size_t>(longest) + 1);
    std::vector<int> v(static_cast<std::size_t>(longest));
    // Columns.
    f.resize(static_cast<std::size_t>(H));
    out.resize(static_cast<std::size_t>(H));
    for (int x = 0; x < W; ++x) {
        for (int y = 0; y < H; ++y) {
            f[static_cast<std::size_t>(y)] = mask.at(x, y) ? 0.0 : inf;
        }
        detail::edt_1d(f, out, v, z);
        for (int y = 0; y < H; ++y) {
            sq[static_cast<std::size_t>(y) * static_cast<std::size_t>(W) + static_cast<std::size_t>(x)] = out[static_cast<std::size_t>(y)];
        }
    }
    // Rows.
    f.resize(static_cast<std::size_t>(W));
    out.resize(static_cast<std::size_t>(W));
    for (int y = 0; y < H; ++y) {
        const auto row = static_cast<std::size_t>(y) * static_cast<std::size_t>(W);
        std::copy_n(sq.begin() + static_cast<std::ptrdiff_t>(row), W, f.begin());
        detail::edt_1d(f, out, v, z);
        for (int x = 0; x < W; ++x) {
            sq[row + static_cast<std::size_t>(x)] = std::sqrt(out[static_cast<std::size_t>(x)]);
        }
    }
    return DistanceField(W, H, std::move(sq));
}

struct ChamferTerms
{
    double consistency = 0.0; ///< sum_i C(u_i): points outside the silhouette
    double coverage = 0.0;    ///< sum over mask pixel centres of the distance to the nearest point
};

namespace detail {

// Uniform bucket grid over the point set for nearest-point queries.
class PointGrid
{
public:
    explicit PointGrid(const Points2& pts) : pts_(pts)
    {
        const auto n = pts.cols();
        lo_ = pts.rowwise().minCoeff();
        const Eigen::Vector2d hi = pts.rowwise().maxCoeff();
        const Eigen::Vector2d extent = (hi - lo_).cwiseMax(1e-9);
        cell_ = std::max(1.0, std::sqrt(extent.x() * extent.y() / static_cast<double>(n)));
        nx_ = static_cast<int>(std::floor(extent.x() / cell_)) + 1;
        ny_ = static_cast<int>(std::floor(extent.y() / cell_)) + 1;
        start_.assign(static_cast<std::size_t>(nx_) * static_cast<std::size_t>(ny_) + 1, 0);
        std::vector<std::size_t> cell_of(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            cell_of[static_cast<std::size_t>(i)] = cell_index(cell_x(pts(0, i)), cell_y(pts(1, i)));
            ++start_[cell_of[static_cast<std::size_t>(i)] + 1];
        }
        for (std::size_t c = 1; c < start_.size(); ++c) {
            start_[c] += start_[c - 1];
        }
        items_.resize(static_cast<std::size_t>(n));
        std::vector<std::size_t> fill(start_.begin(), start_.end() - 1);
        for (Eigen::Index i = 0; i < n; ++i) {
            items_[fill[cell_of[static_cast<std::size_t>(i)]]++] = i;
        }
    }

    /// Squared distance from q to the nearest point.
    double nearest_squared(const Eigen::Vector2d& q) const
    {
        const int qx = static_cast<int>(std::floor((q.x() - lo_.x()) / cell_));
        const int qy = static_cast<int>(std::floor((q.y() - lo_.y()) / cell_));
        double best = std::numeric_limits<double>::infinity();
        // Cells at Chebyshev ring r are at least (r - 1) * cell away.
        const int max_ring = std::max({std::abs(qx), std::abs(qy), std::abs(qx - nx_ + 1), std::abs(qy - ny_ + 1)}) + 1;
        for (int r = 0; r <= max_ring; ++r) {
            if (r >= 1) {
                const double bound = (r - 1) * cell_;
                if (best <= bound * bound) {
                    break;
                }
            }
            for (int cy = qy - r; cy <= qy + r; ++cy) {
                if (cy < 0 || cy >= ny_) {
                    continue;
                }
                const bool edge_row = (cy == qy - r || cy == qy + r);
                for (int cx = qx - r; cx <= qx + r; cx += (edge_row ? 1 : 2 * r)) {
                    if (cx >= 0 && cx < nx_) {
                        const std::size_t c = cell_index(cx, cy);
                        for (std::size_t k = start_[c]; k < start_[c + 1]; ++k) {
                            const Eigen::Index i = items_[k];
                            const double dx = pts_(0, i) - q.x();
                            const double dy = pts_(1, i) - q.y();
                            best = std::min(best, dx * dx + dy * dy);
                        }
                    }
                    if (r == 0) {
                        break;
                    }
                }
            }
        }
        return best;
    }

private:
    int cell_x(double x) const { return std::clamp(static_cast<int>(std::floor((x - lo_.x()) / cell_)), 0, nx_ - 1); }
    int cell_y(double y) const { return std::clamp(static_cast<int>(std::floor((y - lo_.y()) / cell_)), 0, ny_ - 1); }
    std::size_t cell_index(int cx, int cy) const { return static_cast<std::size_t>(cy) * static_cast<std::size_t>(nx_) + static_cast<std::size_t>(cx); }

    const Points2& pts_;
    Eigen::Vector2d lo_;
    double cell_ = 1.0;
    int nx_ = 1;
    int ny_ = 1;
    std::vector<std::size_t> start_;
    std::vector<Eigen::Index> items_;
};

} // namespace detail

/// Silhouette consistency and coverage, both in pixels. `field` must be built from `mask`.
inline ChamferTerms chamfer_loss(const Points2& points, const SilhouetteMask& mask, const DistanceField& field)
{
    if (field.width() != mask.width || field.height() != mask.height) {
        throw ResolutionMismatch("distance field and mask differ in resolution");
    }
    ChamferTerms terms;
    for (Eigen::Index i = 0; i < points.cols(); ++i) {
        terms.consistency += field.sample(points.col(i));
    }
    if (points.cols() == 0) {
        terms.coverage = mask.empty() ? 0.0 : std::numeric_limits<double>::infinity();
        return terms;
    }
    const detail::PointGrid grid(points);
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(x, y)) {
                terms.coverage += std::sqrt(grid.nearest_squared(Eigen::Vector2d(x, y)));
            }
        }
    }
    return terms;
}

/// sum_i |u_i - projected_i|^2.
inline double cycle_loss(const Points2& u, const Points2& projected)
{
    if (u.cols() != projected.cols()) {
        throw DimensionMismatch("cycle_loss: point sets differ in size");
    }
    return (u - projected).squaredNorm();
}

/// sum_i |v_i - v_gt_i|.
inline double visibility_loss(const Weights& v, const Weights& v_gt)
{
    if (v.size() != v_gt.size()) {
        throw DimensionMismatch("visibility_loss: vectors differ in size");
    }
    return (v - v_gt).cwiseAbs().sum();
}

/// Fixed sparse rows regressing 3D keypoints from mesh vertices.
struct KeypointRegressor
{
    struct Row
    {
        std::vector<int> indices;
        std::vector<double> weights;
    };
    std::vector<Row> rows;

    Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(rows.size()); }

    void validate(Eigen::Index vertex_count) const
    {
        for (std::size_t m = 0; m < rows.size(); ++m) {
            const auto& row = rows[m];
            if (row.indices.size() != row.weights.size() || row.indices.empty()) {
                throw DimensionMismatch("keypoint row " + std::to_string(m) + " has mismatched indices and weights");
            }
            double total = 0.0;
            for (std::size_t k = 0; k < row.indices.size(); ++k) {
                if (row.indices[k] < 0 || row.indices[k] >= vertex_count) {
                    throw DimensionMismatch("keypoint row " + std::to_string(m) + " references a vertex out of range");
                }
                if (row.weights[k] < 0.0) {
                    throw Error("keypoint row " + std::to_string(m) + " has a negative weight");
                }
                total += row.weights[k];
            }
            if (std::abs(total - 1.0) > 1e-10) {
                throw Error("keypoint row " + std::to_string(m) + " weights do not sum to 1");
            }
        }
    }

    /// 3D keypoints K V as a 3xM matrix.
    Vertices apply(const Vertices& V) const
    {
        Vertices out = Vertices::Zero(3, size());
        for (std::size_t m = 0; m < rows.size(); ++m) {
            for (std::size_t k = 0; k < rows[m].indices.size(); ++k) {
                out.col(static_cast<Eigen::Index>(m)) += rows[m].weights[k] * V.col(rows[m].indices[k]);
            }
        }
        return out;
    }
};

/// sum_m |k_m - project(K_m V)|_1.
inline double keypoint_loss(const KeypointRegressor& regressor, const Vertices& V, const WeakPerspectiveCamera& camera,
                            const Eigen::Matrix3d& R, const Points2& annotations)
{
    regressor.validate(V.cols());
    if (annotations.cols() != regressor.size()) {
        throw DimensionMismatch("keypoint_loss: " + std::to_string(annotations.cols()) + " annotations for "
                                + std::to_string(regressor.size()) + " keypoints");
    }
    return (annotations - project(camera, R, regressor.apply(V))).cwiseAbs().sum();
}

struct SilhouetteOverlap
{
    double iou = 1.0;
    double abs_difference = 0.0; ///< number of pixels where the masks disagree
};

inline SilhouetteOverlap silhouette_iou(const SilhouetteMask& rendered, const SilhouetteMask& reference)
{
    if (rendered.width != reference.width || rendered.height != reference.height) {
        throw ResolutionMismatch("silhouette_iou: masks differ in resolution");
    }
    std::size_t inter = 0, uni = 0;
    for (std::size_t k = 0; k < rendered.bits.size(); ++k) {
        const bool a = rendered.bits[k] != 0;
        const bool b = reference.bits[k] != 0;
        inter += (a && b) ? 1 : 0;
        uni += (a || b) ? 1 : 0;
    }
    SilhouetteOverlap out;
    out.abs_difference = static_cast<double>(uni - inter);
    out.iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
    return out;
}

} // namespace ttp
