/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/deform.hpp
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
#include "Eigen/SVD"

#include <cmath>
#include <string>
#include <vector>

namespace ttp {

/**
 * Low-rank deformation basis stored as one 3xK block per vertex, so the
 * offset of vertex i is B_i c. K = 0 is a valid (rigid-only) basis.
 */
class DeformationBasis
{
public:
    DeformationBasis() = default;
    DeformationBasis(Eigen::Index vertex_count, Eigen::Index component_count)
        : n_(vertex_count), k_(component_count), data_(Eigen::Matrix3Xd::Zero(3, vertex_count * component_count))
    {
    }

    Eigen::Index vertex_count() const noexcept { return n_; }
    Eigen::Index component_count() const noexcept { return k_; }

    auto block(Eigen::Index i) { return data_.middleCols(i * k_, k_); }
    auto block(Eigen::Index i) const { return data_.middleCols(i * k_, k_); }

    /// From the stacked 3N x K view (rows 3i..3i+2 belong to vertex i).
    static DeformationBasis from_flat(const Eigen::MatrixXd& flat)
    {
        if (flat.rows() % 3 != 0) {
            throw DimensionMismatch("flat basis must have 3N rows");
        }
        DeformationBasis basis(flat.rows() / 3, flat.cols());
        for (Eigen::Index i = 0; i < basis.n_; ++i) {
            basis.block(i) = flat.middleRows(3 * i, 3);
        }
        return basis;
    }

    Eigen::MatrixXd flat() const
    {
        Eigen::MatrixXd out(3 * n_, k_);
        for (Eigen::Index i = 0; i < n_; ++i) {
            out.middleRows(3 * i, 3) = block(i);
        }
        return out;
    }

    /// Per-vertex offsets B_i c as a 3xN matrix.
    Vertices offsets(const Eigen::VectorXd& c) const
    {
        if (c.size() != k_) {
            throw DimensionMismatch("coefficient vector has " + std::to_string(c.size()) + " entries, basis has "
                                    + std::to_string(k_) + " components");
        }
        Vertices out(3, n_);
        for (Eigen::Index i = 0; i < n_; ++i) {
            out.col(i) = block(i) * c;
        }
        return out;
    }

    /// Displacement field of a single component.
    Vertices component(Eigen::Index k) const
    {
        Vertices out(3, n_);
        for (Eigen::Index i = 0; i < n_; ++i) {
            out.col(i) = block(i).col(k);
        }
        return out;
    }

    bool all_finite() const { return data_.allFinite(); }

private:
    Eigen::Index n_ = 0;
    Eigen::Index k_ = 0;
    Eigen::Matrix3Xd data_;
};

/// V = T + B c.
inline Vertices synthesize(const Vertices& T, const DeformationBasis& B, const Eigen::VectorXd& c)
{
    if (B.vertex_count() != T.cols()) {
        throw DimensionMismatch("basis has " + std::to_string(B.vertex_count()) + " vertices, template has "
                                + std::to_string(T.cols()));
    }
    return T + B.offsets(c);
}

/// Mean squared per-vertex offset, sum_i |B_i c|^2 / N.
inline double l2_deformation_penalty(const DeformationBasis& B, const Eigen::VectorXd& c)
{
    if (B.vertex_count() == 0) {
        return 0.0;
    }
    return B.offsets(c).squaredNorm() / static_cast<double>(B.vertex_count());
}

/**
 * Weighted Kabsch: argmin over SO(3) of sum_m w_m |target_m - R source_m|^2.
 * A reflection in the SVD solution is flipped to keep det(R) = +1.
 */
inline Eigen::Matrix3d best_fit_rotation(const Eigen::Matrix3Xd& source, const Eigen::Matrix3Xd& target, const Eigen::VectorXd& weights)
{
    if (source.cols() != target.cols() || source.cols() != weights.size()) {
        throw DimensionMismatch("best_fit_rotation: edge sets and weights differ in size");
    }
    if (source.cols() == 0) {
        throw DegenerateCovariance("best_fit_rotation: no edges");
    }
    if ((weights.array() < 0.0).any()) {
        throw Error("best_fit_rotation: negative weight");
    }
    const Eigen::Matrix3d S = source * weights.asDiagonal() * target.transpose();
    if (S.cwiseAbs().maxCoeff() == 0.0) {
        throw DegenerateCovariance("best_fit_rotation: covariance is zero");
    }
    if (source == target) {
        return Eigen::Matrix3d::Identity();
    }
    const Eigen::JacobiSVD<Eigen::Matrix3d> svd(S, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d U = svd.matrixU();
    const Eigen::Matrix3d V = svd.matrixV();
    Eigen::Vector3d d(1.0, 1.0, (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
    return V * d.asDiagonal() * U.transpose();
}

struct ArapOptions
{
    bool squared = false; ///< square the per-edge residual norm (classic ARAP) instead of the plain norm
};

/// Best-fit rotation of every one-ring from T to V; identity where a ring carries no weight.
inline std::vector<Eigen::Matrix3d> arap_rotations(const TemplateMesh& mesh, const Vertices& T, const Vertices& V)
{
    const auto n = mesh.size();
    std::vector<Eigen::Matrix3d> rotations(static_cast<std::size_t>(n), Eigen::Matrix3d::Identity());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& nbr = mesh.neighbors()[static_cast<std::size_t>(i)];
        const auto& w = mesh.neighbor_weights()[static_cast<std::size_t>(i)];
        Eigen::Matrix3Xd src(3, static_cast<Eigen::Index>(nbr.size()));
        Eigen::Matrix3Xd dst(3, src.cols());
        Eigen::VectorXd wv(src.cols());
        for (std::size_t m = 0; m < nbr.size(); ++m) {
            const auto col = static_cast<Eigen::Index>(m);
            src.col(col) = T.col(i) - T.col(nbr[m]);
            dst.col(col) = V.col(i) - V.col(nbr[m]);
            wv(col) = w[m];
        }
        try {
            rotations[static_cast<std::size_t>(i)] = best_fit_rotation(src, dst, wv);
        } catch (const DegenerateCovariance&) {
            // keep identity
        }
    }
    return rotations;
}

/**
 * (1/N) sum_i sum_{j in N(i)} w_ij |(V_i - V_j) - R_i (T_i - T_j)| with R_i
 * the best-fit rotation of the one-ring of i.
 */
inline double arap_energy(const TemplateMesh& mesh, const Vertices& T, const Vertices& V, const ArapOptions& options = {})
{
    if (T.cols() != mesh.size() || V.cols() != mesh.size()) {
        throw DimensionMismatch("arap_energy: vertex count differs from mesh");
    }
    if (mesh.size() == 0) {
        return 0.0;
    }
    const auto rotations = arap_rotations(mesh, T, V);
    double energy = 0.0;
    for (Eigen::Index i = 0; i < mesh.size(); ++i) {
        const auto& nbr = mesh.neighbors()[static_cast<std::size_t>(i)];
        const auto& w = mesh.neighbor_weights()[static_cast<std::size_t>(i)];
        const Eigen::Matrix3d& R = rotations[static_cast<std::size_t>(i)];
        for (std::size_t m = 0; m < nbr.size(); ++m) {
            const Eigen::Vector3d r = (V.col(i) - V.col(nbr[m])) - R * (T.col(i) - T.col(nbr[m]));
            energy += w[m] * (options.squared ? r.squaredNorm() : r.norm());
        }
    }
    return energy / static_cast<double>(mesh.size());
}

inline double arap_energy(const TemplateMesh& mesh, const Vertices& V, const ArapOptions& options = {})
{
    return arap_energy(mesh, mesh.vertices(), V, options);
}

/// ARAP of the template displaced by a single basis component, T + B e_k.
inline double arap_component_energy(const TemplateMesh& mesh, const DeformationBasis& B, Eigen::Index k, const ArapOptions& options = {})
{
    return arap_energy(mesh, mesh.vertices(), mesh.vertices() + B.component(k), options);
}

} // namespace ttp
