/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/harness.hpp
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

#include "ttp/deform.hpp"
#include "ttp/diff.hpp"
#include "ttp/geometry.hpp"
#include "ttp/io.hpp"
#include "ttp/losses.hpp"
#include "ttp/mesh.hpp"
#include "ttp/raster.hpp"
#include "ttp/solver.hpp"

#include "Eigen/Core"
#include "Eigen/QR"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

namespace ttp {

// ---------------------------------------------------------------------------
// Synthetic scenarios.

struct SyntheticScenario
{
    std::uint64_t seed = 0;
    std::string mesh = "sphere(200)"; ///< builtin name or OBJ path
    Eigen::Index components = 16;
    double basis_amplitude = 0.1;      ///< RMS per-vertex offset of each component
    double cone_degrees = 60.0;        ///< max rotation angle from the default initialization
    double scale_min = 40.0;
    double scale_max = 60.0;
    double translation_jitter = 10.0;  ///< pixels around the image centre
    double coefficient_range = 1.0;    ///< c ~ U[-range, range]
    double noise = 0.0;                ///< sigma as a fraction of s
    double occlusion = 0.0;            ///< fraction of points forced to v = 0
    Resolution resolution;

    void validate() const
    {
        if (!(occlusion >= 0.0 && occlusion < 1.0)) {
            throw Error("occlusion fraction must lie in [0, 1)");
        }
        if (!(noise >= 0.0)) {
            throw Error("noise must be nonnegative");
        }
        if (components < 0) {
            throw Error("component count must be nonnegative");
        }
        if (!(scale_min > 0.0 && scale_max >= scale_min)) {
            throw Error("invalid scale range");
        }
        detail::check_resolution(resolution);
    }
};

struct GroundTruth
{
    Eigen::Vector3d r = Eigen::Vector3d::Zero();
    Eigen::Vector2d t = Eigen::Vector2d::Zero();
    double s = 1.0;
    Eigen::VectorXd c;
};

struct SyntheticData
{
    std::shared_ptr<const TemplateMesh> mesh;
    DeformationBasis basis;
    Observation observation;
    GroundTruth truth;
    Weights rendered_visibility; ///< z-buffer visibility before occlusion
    SilhouetteMask mask;
};

inline TemplateMesh load_mesh_source(const std::string& source, const MeshOptions& options = {})
{
    TemplateMesh mesh;
    if (make_builtin_mesh(source, mesh, options)) {
        return mesh;
    }
    std::ifstream in(source);
    if (!in) {
        throw Error("unknown builtin mesh or unreadable OBJ file: " + source);
    }
    return load_obj(in, options);
}

/// K raw fields, each a sum of three random low-frequency sinusoidal vector fields over T, stacked 3N x K.
inline Eigen::MatrixXd random_smooth_fields(const Vertices& T, Eigen::Index K, std::mt19937_64& rng)
{
    const auto N = T.cols();
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI);
    std::uniform_real_distribution<double> freq(0.5, 2.0);
    Eigen::MatrixXd fields = Eigen::MatrixXd::Zero(3 * N, K);
    for (Eigen::Index k = 0; k < K; ++k) {
        for (int m = 0; m < 3; ++m) {
            Eigen::Vector3d direction(unit(rng), unit(rng), unit(rng));
            Eigen::Vector3d omega(unit(rng), unit(rng), unit(rng));
            omega = omega.normalized() * freq(rng);
            const double phi = phase(rng);
            for (Eigen::Index i = 0; i < N; ++i) {
                fields.block<3, 1>(3 * i, k) += direction * std::sin(omega.dot(T.col(i)) + phi);
            }
        }
    }
    return fields;
}

/**
 * Turns raw fields into a basis: each column is made orthogonal to every
 * affine field A T_i + b under the vertex weights, then rescaled to the
 * requested RMS per-vertex offset. With the visible vertices as weights the
 * deformation stays separable from pose under the observing camera.
 */
inline DeformationBasis affine_free_basis(const Vertices& T, const Eigen::MatrixXd& fields, const Weights& weights,
                                          double amplitude)
{
    const auto N = T.cols();
    if (weights.size() != N || fields.rows() != 3 * N) {
        throw DimensionMismatch("basis fields and weights must match the template");
    }
    Eigen::VectorXd sw(3 * N);
    Eigen::MatrixXd affine(3 * N, 12);
    for (Eigen::Index i = 0; i < N; ++i) {
        const double root = std::sqrt(std::max(weights(i), 0.0));
        sw.segment<3>(3 * i).setConstant(root);
        affine.block<3, 3>(3 * i, 0) = root * Eigen::Matrix3d::Identity();
        for (int a = 0; a < 3; ++a) {
            affine.block<3, 3>(3 * i, 3 + 3 * a) = root * T(a, i) * Eigen::Matrix3d::Identity();
        }
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(affine);
    Eigen::MatrixXd flat(3 * N, fields.cols());
    for (Eigen::Index k = 0; k < fields.cols(); ++k) {
        const Eigen::VectorXd x = qr.solve(sw.cwiseProduct(fields.col(k)));
        Eigen::VectorXd field = fields.col(k);
        for (Eigen::Index i = 0; i < N; ++i) {
            Eigen::Vector3d a = x.segment<3>(0);
            for (int d = 0; d < 3; ++d) {
                a += T(d, i) * x.segment<3>(3 + 3 * d);
            }
            field.segment<3>(3 * i) -= a;
        }
        const double rms = std::sqrt(field.squaredNorm() / static_cast<double>(N));
        if (rms > 0.0) {
            field *= amplitude / rms;
        }
        flat.col(k) = field;
    }
    return DeformationBasis::from_flat(flat);
}

inline DeformationBasis random_smooth_basis(const Vertices& T, Eigen::Index K, double amplitude, std::mt19937_64& rng,
                                           const Weights& weights)
{
    return affine_free_basis(T, random_smooth_fields(T, K, rng), weights, amplitude);
}

/// Uniformly random axis, angle uniform in [0, max_angle].
inline Eigen::Vector3d random_rotation_in_cone(double max_angle, std::mt19937_64& rng)
{
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> angle(0.0, max_angle);
    Eigen::Vector3d axis(gauss(rng), gauss(rng), gauss(rng));
    while (axis.norm() < 1e-8) {
        axis = Eigen::Vector3d(gauss(rng), gauss(rng), gauss(rng));
    }
    return axis.normalized() * angle(rng);
}

/// Deterministic in the scenario (including its seed).
inline SyntheticData generate_synthetic(const SyntheticScenario& scenario)
{
    scenario.validate();
    std::mt19937_64 rng(scenario.seed);
    SyntheticData data;
    data.mesh = std::make_shared<const TemplateMesh>(load_mesh_source(scenario.mesh));
    const Vertices& T = data.mesh->vertices();
    const auto N = T.cols();
    const auto K = scenario.components;

    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> scale(scenario.scale_min, scenario.scale_max);
    GroundTruth& gt = data.truth;
    gt.r = random_rotation_in_cone(scenario.cone_degrees * M_PI / 180.0, rng);
    gt.s = scale(rng);
    gt.t = Eigen::Vector2d(0.5 * (scenario.resolution.width - 1), 0.5 * (scenario.resolution.height - 1))
           + scenario.translation_jitter * Eigen::Vector2d(unit(rng), unit(rng));
    gt.c.resize(K);
    for (Eigen::Index k = 0; k < K; ++k) {
        gt.c(k) = scenario.coefficient_range * unit(rng);
    }
    const WeakPerspectiveCamera camera{gt.s, gt.t};
    const Eigen::Matrix3d R = exp_map(gt.r);

    // The basis is weighted by the vertices visible after deformation; iterate
    // because the deformation itself moves the silhouette.
    const Eigen::MatrixXd fields = random_smooth_fields(T, K, rng);
    Weights weights = render_visibility(T, data.mesh->faces(), camera, R, scenario.resolution);
    Vertices V;
    for (int pass = 0; pass < 8; ++pass) {
        data.basis = affine_free_basis(T, fields, weights, scenario.basis_amplitude);
        V = synthesize(T, data.basis, gt.c);
        Weights seen = render_visibility(V, data.mesh->faces(), camera, R, scenario.resolution);
        if (seen == weights) {
            break;
        }
        weights = std::move(seen);
    }
    Points2 u = project(camera, R, V);
    if (scenario.noise > 0.0) {
        std::normal_distribution<double> gauss(0.0, scenario.noise * gt.s);
        for (Eigen::Index i = 0; i < N; ++i) {
            u(0, i) += gauss(rng);
            u(1, i) += gauss(rng);
        }
    }
    data.rendered_visibility = render_visibility(V, data.mesh->faces(), camera, R, scenario.resolution);
    Weights v = data.rendered_visibility;
    const auto occluded = static_cast<std::size_t>(std::floor(scenario.occlusion * static_cast<double>(N)));
    if (occluded > 0) {
        std::vector<Eigen::Index> visible, hidden;
        for (Eigen::Index i = 0; i < N; ++i) {
            (v(i) > 0.0 ? visible : hidden).push_back(i);
        }
        std::shuffle(visible.begin(), visible.end(), rng);
        std::shuffle(hidden.begin(), hidden.end(), rng);
        // Visible points are occluded first; hidden ones only count when there are too few.
        std::vector<Eigen::Index> order = visible;
        order.insert(order.end(), hidden.begin(), hidden.end());
        for (std::size_t k = 0; k < occluded; ++k) {
            v(order[k]) = 0.0;
        }
    }
    data.observation = {u, v};
    data.mask = rasterize_silhouette(V, data.mesh->faces(), camera, R, scenario.resolution);
    return data;
}

inline Json truth_to_json(const GroundTruth& gt)
{
    Json j;
    j["r"] = to_json_array(gt.r);
    j["t"] = to_json_array(gt.t);
    j["s"] = gt.s;
    j["c"] = to_json_array(gt.c);
    return j;
}

inline GroundTruth parse_truth(const std::string& text)
{
    const auto doc = JsonDocument::parse(text);
    GroundTruth gt;
    gt.r = doc.vector(Json::json_pointer("/r"), 3);
    gt.t = doc.vector(Json::json_pointer("/t"), 2);
    gt.s = doc.number(Json::json_pointer("/s"));
    gt.c = doc.vector(Json::json_pointer("/c"));
    return gt;
}

/// Writes mesh.obj, basis.json, observation.json, truth.json, mask.pgm and mask.json.
inline void write_synthetic(const SyntheticData& data, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    write_file((dir / "mesh.obj").string(), write_obj(data.mesh->vertices(), data.mesh->faces()));
    write_file((dir / "basis.json").string(), dump_json(basis_to_json(data.basis)));
    write_file((dir / "observation.json").string(), dump_json(observation_to_json(data.observation)));
    Json truth = truth_to_json(data.truth);
    truth["visibility"] = to_json_array(data.rendered_visibility);
    write_file((dir / "truth.json").string(), dump_json(truth));
    write_file((dir / "mask.pgm").string(), write_pgm(data.mask));
    write_file((dir / "mask.json").string(), dump_json(mask_to_rle_json(data.mask)));
}

// ---------------------------------------------------------------------------
// Multi-start over the 24 rotations of the cube.

inline std::vector<Eigen::Vector3d> cube_rotation_grid()
{
    std::vector<Eigen::Vector3d> out;
    out.emplace_back(Eigen::Vector3d::Zero());
    for (int axis = 0; axis < 3; ++axis) {
        for (int q = 1; q <= 3; ++q) {
            out.emplace_back(Eigen::Vector3d::Unit(axis) * (q * M_PI / 2.0));
        }
    }
    const Eigen::Vector3d edges[6] = {{1, 1, 0}, {1, -1, 0}, {1, 0, 1}, {1, 0, -1}, {0, 1, 1}, {0, 1, -1}};
    for (const auto& e : edges) {
        out.emplace_back(e.normalized() * M_PI);
    }
    const Eigen::Vector3d corners[4] = {{1, 1, 1}, {1, 1, -1}, {1, -1, 1}, {-1, 1, 1}};
    for (const auto& d : corners) {
        out.emplace_back(d.normalized() * (2.0 * M_PI / 3.0));
        out.emplace_back(d.normalized() * (-2.0 * M_PI / 3.0));
    }
    return out;
}

/// Best of 24 fits started from the cube rotations (lowest final objective, earliest on ties).
inline FitResult fit_global_grid(const FitProblem& problem)
{
    const Pose base = default_initial_pose(problem);
    std::optional<FitResult> best;
    for (const auto& r0 : cube_rotation_grid()) {
        FitResult candidate = fit(problem, Pose{r0, base.t});
        if (!best || candidate.objective < best->objective) {
            best = std::move(candidate);
        }
    }
    return *best;
}

// ---------------------------------------------------------------------------
// Metrics.

struct FitMetrics
{
    double rot_err = 0.0;     ///< geodesic distance, radians
    double trans_err = 0.0;   ///< image units
    double scale_err = 0.0;   ///< |s - s_true|
    double coef_err = 0.0;    ///< max-norm of c - c_true
    double reproj_rmse = 0.0; ///< visibility-weighted, against the observation
    double vertex_rmse = 0.0; ///< posed 3D vertices, model units
    double silhouette_iou = 0.0;
    double objective = 0.0;
};

inline double reprojection_rmse(const FitProblem& problem, double s, const Parameters& p)
{
    const Vertices V = synthesize(problem.template_vertices(), problem.basis, p.c);
    const Points2 proj = project(WeakPerspectiveCamera{s, p.t}, exp_map(p.r), V);
    const auto& v = problem.observation.visibility;
    const double total = v.sum();
    if (!(total > 0.0)) {
        return 0.0;
    }
    return std::sqrt((proj - problem.observation.points).colwise().squaredNorm().dot(v) / total);
}

inline FitMetrics evaluate_fit(const FitProblem& problem, const SyntheticData& data, double s, const Parameters& p,
                               double objective_value, const Resolution& resolution)
{
    FitMetrics m;
    const Eigen::Matrix3d R = exp_map(p.r);
    const Eigen::Matrix3d R_true = exp_map(data.truth.r);
    m.rot_err = geodesic_distance(R, R_true);
    m.trans_err = (p.t - data.truth.t).norm();
    m.scale_err = std::abs(s - data.truth.s);
    m.coef_err = p.c.size() > 0 ? (p.c - data.truth.c).cwiseAbs().maxCoeff() : 0.0;
    m.reproj_rmse = reprojection_rmse(problem, s, p);
    const Vertices& T = problem.template_vertices();
    const Vertices V = synthesize(T, problem.basis, p.c);
    const Vertices V_true = synthesize(T, data.basis, data.truth.c);
    m.vertex_rmse = T.cols() > 0 ? std::sqrt((R * V - R_true * V_true).squaredNorm() / static_cast<double>(T.cols())) : 0.0;
    const SilhouetteMask rendered = rasterize_silhouette(V, problem.mesh->faces(), WeakPerspectiveCamera{s, p.t}, R, resolution);
    m.silhouette_iou = silhouette_iou(rendered, data.mask).iou;
    m.objective = objective_value;
    return m;
}

// ---------------------------------------------------------------------------
// Batch experiments.

enum class ScaleSource
{
    truth, ///< the generating scale is handed to the solver
    rule   ///< the solver estimates s from the observation
};

struct BenchOptions
{
    SyntheticScenario scenario; ///< sample j uses seed scenario.seed + j
    int samples = 1;
    int threads = 1;
    double gamma = 1e-3;
    int iterations = 4;
    bool per_iteration = false;
    bool global_grid = false;
    ScaleSource scale_source = ScaleSource::truth;
};

struct BenchRow
{
    std::uint64_t seed = 0;
    std::string status;  ///< "ok", "not_converged" or "error: ..."
    FitMetrics metrics;
    std::vector<double> trace;
    std::vector<FitMetrics> per_iteration; ///< iterates 0..iterations, when requested
};

struct ColumnSummary
{
    double mean = 0.0;
    double median = 0.0;
    double stddev = 0.0; ///< population standard deviation
};

struct ExperimentReport
{
    std::vector<BenchRow> rows;
};

inline const std::vector<std::pair<std::string, double FitMetrics::*>>& metric_columns()
{
    static const std::vector<std::pair<std::string, double FitMetrics::*>> columns = {
        {"rot_err", &FitMetrics::rot_err},         {"trans_err", &FitMetrics::trans_err},
        {"scale_err", &FitMetrics::scale_err},     {"coef_err", &FitMetrics::coef_err},
        {"reproj_rmse", &FitMetrics::reproj_rmse}, {"vertex_rmse", &FitMetrics::vertex_rmse},
        {"silhouette_iou", &FitMetrics::silhouette_iou}, {"objective", &FitMetrics::objective},
    };
    return columns;
}

inline ColumnSummary summarize(std::vector<double> values)
{
    ColumnSummary out;
    if (values.empty()) {
        return out;
    }
    const double n = static_cast<double>(values.size());
    out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (const double x : values) {
        ss += (x - out.mean) * (x - out.mean);
    }
    out.stddev = std::sqrt(ss / n);
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    out.median = values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
    return out;
}

inline FitProblem make_problem(const SyntheticData& data, double gamma, int iterations, ScaleSource scale_source)
{
    FitProblem problem;
    problem.mesh = data.mesh;
    problem.basis = data.basis;
    problem.observation = data.observation;
    problem.gamma = gamma;
    problem.iterations = iterations;
    if (scale_source == ScaleSource::truth) {
        problem.scale = data.truth.s;
    }
    return problem;
}

inline BenchRow run_bench_sample(const BenchOptions& options, int index)
{
    BenchRow row;
    SyntheticScenario scenario = options.scenario;
    scenario.seed = options.scenario.seed + static_cast<std::uint64_t>(index);
    row.seed = scenario.seed;
    try {
        const SyntheticData data = generate_synthetic(scenario);
        const FitProblem problem = make_problem(data, options.gamma, options.iterations, options.scale_source);
        const FitResult result = options.global_grid ? fit_global_grid(problem) : fit(problem);
        row.status = result.converged ? "ok" : "not_converged";
        row.trace = result.objective_trace;
        row.metrics = evaluate_fit(problem, data, result.s, result.parameters(), result.objective, scenario.resolution);
        if (options.per_iteration) {
            for (const auto& it : result.iterates) {
                row.per_iteration.push_back(evaluate_fit(problem, data, result.s, it.parameters, it.objective, scenario.resolution));
            }
        }
    } catch (const std::exception& e) {
        row.status = std::string("error: ") + e.what();
    }
    return row;
}

/// Runs the samples on a worker pool; rows are stored by sample index, so the report does not depend on scheduling.
inline ExperimentReport run_bench(const BenchOptions& options)
{
    if (options.samples < 1) {
        throw Error("bench needs at least one sample");
    }
    options.scenario.validate();
    ExperimentReport report;
    report.rows.resize(static_cast<std::size_t>(options.samples));
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (int j = next++; j < options.samples; j = next++) {
            report.rows[static_cast<std::size_t>(j)] = run_bench_sample(options, j);
        }
    };
    const int threads = std::clamp(options.threads, 1, options.samples);
    std::vector<std::thread> pool;
    for (int k = 1; k < threads; ++k) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& th : pool) {
        th.join();
    }
    return report;
}

inline std::string report_csv(const ExperimentReport& report)
{
    std::string out = "sample,seed,status";
    for (const auto& [name, member] : metric_columns()) {
        out += "," + name;
    }
    out += ",trace\n";
    for (std::size_t j = 0; j < report.rows.size(); ++j) {
        const BenchRow& row = report.rows[j];
        std::string status = row.status;
        std::replace(status.begin(), status.end(), ',', ';');
        std::replace(status.begin(), status.end(), '\n', ' ');
        out += std::to_string(j) + "," + std::to_string(row.seed) + "," + status;
        for (const auto& [name, member] : metric_columns()) {
            out += "," + format_double(row.metrics.*member);
        }
        out += ",";
        for (std::size_t k = 0; k < row.trace.size(); ++k) {
            out += (k > 0 ? ";" : "") + format_double(row.trace[k]);
        }
        out += "\n";
    }
    return out;
}

/// Long format: one line per (sample, iteration), iteration 0 being the initial state.
inline std::string per_iteration_csv(const ExperimentReport& report)
{
    std::string out = "sample,iteration";
    for (const auto& [name, member] : metric_columns()) {
        out += "," + name;
    }
    out += "\n";
    for (std::size_t j = 0; j < report.rows.size(); ++j) {
        for (std::size_t it = 0; it < report.rows[j].per_iteration.size(); ++it) {
            out += std::to_string(j) + "," + std::to_string(it);
            for (const auto& [name, member] : metric_columns()) {
                out += "," + format_double(report.rows[j].per_iteration[it].*member);
            }
            out += "\n";
        }
    }
    return out;
}

/// Mean of one metric at each outer iteration over the rows that completed.
inline std::vector<double> per_iteration_means(const ExperimentReport& report, double FitMetrics::*member)
{
    std::vector<double> sum;
    std::vector<int> count;
    for (const auto& row : report.rows) {
        if (row.per_iteration.size() > sum.size()) {
            sum.resize(row.per_iteration.size(), 0.0);
            count.resize(row.per_iteration.size(), 0);
        }
        for (std::size_t it = 0; it < row.per_iteration.size(); ++it) {
            sum[it] += row.per_iteration[it].*member;
            ++count[it];
        }
    }
    for (std::size_t it = 0; it < sum.size(); ++it) {
        sum[it] /= count[it];
    }
    return sum;
}

inline Json report_summary_json(const ExperimentReport& report)
{
    Json j;
    j["samples"] = report.rows.size();
    std::size_t ok = 0, not_converged = 0, errors = 0;
    for (const auto& row : report.rows) {
        if (row.status == "ok") {
            ++ok;
        } else if (row.status == "not_converged") {
            ++not_converged;
        } else {
            ++errors;
        }
    }
    j["ok"] = ok;
    j["not_converged"] = not_converged;
    j["errors"] = errors;
    Json columns;
    for (const auto& [name, member] : metric_columns()) {
        std::vector<double> values;
        for (const auto& row : report.rows) {
            if (row.status.rfind("error", 0) != 0) {
                values.push_back(row.metrics.*member);
            }
        }
        const ColumnSummary s = summarize(values);
        Json c;
        c["mean"] = s.mean;
        c["median"] = s.median;
        c["stddev"] = s.stddev;
        columns[name] = c;
    }
    j["columns"] = columns;
    bool any_per_iteration = false;
    for (const auto& row : report.rows) {
        any_per_iteration = any_per_iteration || !row.per_iteration.empty();
    }
    if (any_per_iteration) {
        Json per;
        for (const auto& [name, member] : metric_columns()) {
            Json means = Json::array();
            for (const double x : per_iteration_means(report, member)) {
                means.push_back(x);
            }
            per[name] = means;
        }
        j["per_iteration_mean"] = per;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Gradient check: implicit differentiation against finite differences of the full fit.

struct GradcheckOptions
{
    double step = 1e-5;
    double tolerance = 1e-3;
    std::uint64_t seed = 0;
    int coordinates_per_block = 12; ///< finite differences on a random subset of each block
    double absolute_floor = 1e-6;   ///< gradient magnitude below which errors are measured absolutely
};

struct BlockCheck
{
    std::string name;
    std::size_t coordinates = 0;
    double max_abs_error = 0.0;
    double relative_error = 0.0; ///< max |ift - fd| / max(|fd|, |ift|, floor) over the block
};

struct GradcheckReport
{
    std::vector<BlockCheck> blocks;
    bool passed = false;
};

inline double relative_block_error(const Eigen::VectorXd& ift, const Eigen::VectorXd& fd, double floor)
{
    if (ift.size() == 0) {
        return 0.0;
    }
    const double scale = std::max({fd.cwiseAbs().maxCoeff(), ift.cwiseAbs().maxCoeff(), floor});
    return (ift - fd).cwiseAbs().maxCoeff() / scale;
}

/**
 * Compares solver_vjp with central differences of loss = w . theta* for a
 * random w. The problem is fitted with Newton polishing so that the implicit
 * function theorem applies. Throws SingularHessian on an ill-conditioned optimum.
 */
inline GradcheckReport gradcheck(FitProblem problem, const GradcheckOptions& options)
{
    problem.polish = true;
    const FitResult base = fit(problem);
    if (!base.converged) {
        throw NotStationary("gradcheck: fit did not reach a stationary point");
    }
    problem.scale = base.s;
    const auto N = problem.vertex_count();
    const auto K = problem.component_count();
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd w(5 + K);
    for (Eigen::Index k = 0; k < w.size(); ++k) {
        w(k) = gauss(rng);
    }
    auto loss = [&w](const FitResult& r) { return w.dot(r.parameters().pack()); };
    const InputGradients ift = solver_vjp(problem, base, w);

    auto pick = [&](Eigen::Index size) {
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(size));
        std::iota(idx.begin(), idx.end(), Eigen::Index{0});
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(options.coordinates_per_block)));
        std::sort(idx.begin(), idx.end());
        return idx;
    };

    GradcheckReport report;
    auto check = [&](const std::string& name, InputCoordinate::Block block, Eigen::Index size, auto analytic) {
        const auto idx = pick(size);
        std::vector<InputCoordinate> selector;
        Eigen::VectorXd a(static_cast<Eigen::Index>(idx.size()));
        for (std::size_t k = 0; k < idx.size(); ++k) {
            selector.push_back({block, idx[k]});
            a(static_cast<Eigen::Index>(k)) = analytic(idx[k]);
        }
        const Eigen::VectorXd fd = fd_oracle(problem, loss, selector, options.step);
        BlockCheck bc;
        bc.name = name;
        bc.coordinates = idx.size();
        bc.max_abs_error = idx.empty() ? 0.0 : (a - fd).cwiseAbs().maxCoeff();
        bc.relative_error = relative_block_error(a, fd, options.absolute_floor);
        report.blocks.push_back(bc);
    };
    check("points", InputCoordinate::Block::points, 2 * N, [&](Eigen::Index k) { return ift.points(k % 2, k / 2); });
    check("visibility", InputCoordinate::Block::visibility, N, [&](Eigen::Index k) { return ift.visibility(k); });
    if (K > 0) {
        check("basis", InputCoordinate::Block::basis, 3 * N * K, [&](Eigen::Index k) {
            const Eigen::Index i = k / (3 * K);
            const Eigen::Index rem = k % (3 * K);
            return ift.basis.block(i)(rem / K, rem % K);
        });
    }
    report.passed = std::all_of(report.blocks.begin(), report.blocks.end(),
                                [&](const BlockCheck& b) { return b.relative_error < options.tolerance; });
    return report;
}

} // namespace ttp
