/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: tools/ttp.cpp
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
#include "ttp/ttp.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

enum ExitCode : int
{
    exit_ok = 0,
    exit_input = 1,
    exit_not_converged = 2,
    exit_singular = 3,
    exit_check_failed = 4,
};

/// JSON config: top-level keys set global flags, objects named after a
/// subcommand set that subcommand's flags. Command-line flags take precedence.
class JsonConfig : public CLI::Config
{
public:
    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override
    {
        ttp::Json j = ttp::Json::object();
        for (const CLI::Option* opt : app->get_options()) {
            if (opt->get_lnames().empty() || !opt->get_configurable()) {
                continue;
            }
            const std::string value = opt->count() > 0 ? opt->as<std::string>() : (default_also ? opt->get_default_str() : "");
            if (!value.empty()) {
                j[opt->get_lnames().front()] = value;
            }
        }
        return ttp::dump_json(j);
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override
    {
        std::stringstream ss;
        ss << input.rdbuf();
        ttp::Json root;
        try {
            root = ttp::Json::parse(ss.str());
        } catch (const ttp::Json::parse_error& e) {
            throw CLI::ConversionError("config file: " + std::string(e.what()));
        }
        if (!root.is_object()) {
            throw CLI::ConversionError("config file must hold a JSON object");
        }
        std::vector<CLI::ConfigItem> items;
        collect(root, {}, items);
        return items;
    }

private:
    static std::string scalar(const ttp::Json& v)
    {
        if (v.is_string()) {
            return v.get<std::string>();
        }
        if (v.is_number_float()) {
            return ttp::format_double(v.get<double>());
        }
        return v.dump();
    }

    static void collect(const ttp::Json& obj, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& items)
    {
        for (auto it = obj.begin(); it != obj.end(); ++it) {
            if (it->is_object()) {
                auto sub = parents;
                sub.push_back(it.key());
                collect(*it, sub, items);
                continue;
            }
            CLI::ConfigItem item;
            item.parents = parents;
            item.name = it.key();
            if (it->is_array()) {
                for (const auto& v : *it) {
                    item.inputs.push_back(scalar(v));
                }
            } else {
                item.inputs.push_back(scalar(*it));
            }
            items.push_back(std::move(item));
        }
    }
};

struct GlobalFlags
{
    int iters = 4;
    std::optional<int> k;
    double gamma = 1e-3;
    std::uint64_t seed = 0;
    int res = 256;
    int threads = 1;
    std::string out_dir = ".";
};

ttp::Resolution resolution(const GlobalFlags& g) { return {g.res, g.res}; }

void write_outputs(const fs::path& dir, const std::vector<std::pair<std::string, std::string>>& files)
{
    fs::create_directories(dir);
    for (const auto& [name, contents] : files) {
        ttp::write_file((dir / name).string(), contents);
    }
}

// -- synth -------------------------------------------------------------------

struct SynthFlags
{
    std::string mesh = "sphere(200)";
    double noise = 0.0;
    double occlusion = 0.0;
    double cone = 60.0;
};

int run_synth(const GlobalFlags& g, const SynthFlags& f)
{
    ttp::SyntheticScenario sc;
    sc.seed = g.seed;
    sc.mesh = f.mesh;
    sc.components = g.k.value_or(16);
    sc.noise = f.noise;
    sc.occlusion = f.occlusion;
    sc.cone_degrees = f.cone;
    sc.resolution = resolution(g);
    const ttp::SyntheticData data = ttp::generate_synthetic(sc);
    ttp::write_synthetic(data, g.out_dir);
    std::printf("wrote %lld vertices, K=%lld to %s\n", static_cast<long long>(data.mesh->size()),
                static_cast<long long>(data.basis.component_count()), g.out_dir.c_str());
    return exit_ok;
}

// -- fit ---------------------------------------------------------------------

struct ProblemFiles
{
    std::string mesh;
    std::string basis;
    std::string observation;
    std::string weighting = "visibility";
};

ttp::FitProblem load_problem(const GlobalFlags& g, const ProblemFiles& files)
{
    ttp::FitProblem problem;
    problem.mesh = std::make_shared<const ttp::TemplateMesh>(ttp::load_mesh_source(files.mesh));
    problem.basis = ttp::parse_basis(ttp::read_file(files.basis));
    problem.observation = ttp::parse_observation(ttp::read_file(files.observation));
    problem.gamma = g.gamma;
    problem.iterations = g.iters;
    problem.scale_options.weighting =
        files.weighting == "uniform" ? ttp::ScaleWeighting::uniform : ttp::ScaleWeighting::visibility;
    problem.validate();
    return problem;
}

struct FitFlags
{
    ProblemFiles files;
    std::optional<double> scale;
    std::string truth;
    bool polish = false;
    bool global_grid = false;
};

int run_fit(const GlobalFlags& g, const FitFlags& f)
{
    ttp::FitProblem problem = load_problem(g, f.files);
    problem.polish = f.polish;
    std::optional<ttp::GroundTruth> truth;
    if (!f.truth.empty()) {
        truth = ttp::parse_truth(ttp::read_file(f.truth));
        problem.scale = truth->s;
    }
    if (f.scale) {
        problem.scale = *f.scale;
    }
    const ttp::FitResult result = f.global_grid ? ttp::fit_global_grid(problem) : ttp::fit(problem);
    write_outputs(g.out_dir, {{"result.json", ttp::dump_json(ttp::fit_result_to_json(result))},
                              {"trace.csv", ttp::trace_csv(result.objective_trace)}});
    std::printf("objective %s  converged %s  evals %d\n", ttp::format_double(result.objective).c_str(),
                result.converged ? "true" : "false", result.evals);
    if (truth) {
        const double rot = ttp::geodesic_distance(ttp::exp_map(result.r), ttp::exp_map(truth->r));
        const double coef = result.c.size() == truth->c.size() && result.c.size() > 0
                                ? (result.c - truth->c).cwiseAbs().maxCoeff()
                                : 0.0;
        std::printf("rot_err %s  trans_err %s  coef_err %s  reproj_rmse %s\n", ttp::format_double(rot).c_str(),
                    ttp::format_double((result.t - truth->t).norm()).c_str(), ttp::format_double(coef).c_str(),
                    ttp::format_double(ttp::reprojection_rmse(problem, result.s, result.parameters())).c_str());
    }
    return result.converged ? exit_ok : exit_not_converged;
}

// -- gradcheck ---------------------------------------------------------------

struct GradcheckFlags
{
    ProblemFiles files;
    int n = 20;
    double noise = 0.01;
    double step = 1e-5;
    double tolerance = 1e-3;
    int coordinates = 12;
};

int run_gradcheck(const GlobalFlags& g, const GradcheckFlags& f)
{
    ttp::FitProblem problem;
    if (!f.files.mesh.empty() || !f.files.basis.empty() || !f.files.observation.empty()) {
        if (f.files.mesh.empty() || f.files.basis.empty() || f.files.observation.empty()) {
            throw ttp::Error("gradcheck needs --mesh, --basis and --observation together");
        }
        problem = load_problem(g, f.files);
    } else {
        ttp::SyntheticScenario sc;
        sc.seed = g.seed;
        sc.mesh = "sphere(" + std::to_string(f.n) + ")";
        sc.components = g.k.value_or(2);
        sc.noise = f.noise;
        sc.resolution = resolution(g);
        const ttp::SyntheticData data = ttp::generate_synthetic(sc);
        problem = ttp::make_problem(data, g.gamma, g.iters, ttp::ScaleSource::truth);
    }
    ttp::GradcheckOptions opts;
    opts.step = f.step;
    opts.tolerance = f.tolerance;
    opts.seed = g.seed;
    opts.coordinates_per_block = f.coordinates;
    const ttp::GradcheckReport report = ttp::gradcheck(problem, opts);
    for (const auto& b : report.blocks) {
        std::printf("%-10s coords %3zu  max_abs_err %-24s max_rel_err %s\n", b.name.c_str(), b.coordinates,
                    ttp::format_double(b.max_abs_error).c_str(), ttp::format_double(b.relative_error).c_str());
    }
    std::printf("%s (tolerance %s)\n", report.passed ? "PASS" : "FAIL", ttp::format_double(f.tolerance).c_str());
    return report.passed ? exit_ok : exit_check_failed;
}

// -- bench -------------------------------------------------------------------

struct BenchFlags
{
    SynthFlags synth;
    int samples = 1;
    bool per_iteration = false;
    bool global_grid = false;
    bool no_meta = false;
    std::string scale_source = "truth";
};

int run_bench(const GlobalFlags& g, const BenchFlags& f)
{
    ttp::BenchOptions opts;
    opts.scenario.seed = g.seed;
    opts.scenario.mesh = f.synth.mesh;
    opts.scenario.components = g.k.value_or(16);
    opts.scenario.noise = f.synth.noise;
    opts.scenario.occlusion = f.synth.occlusion;
    opts.scenario.cone_degrees = f.synth.cone;
    opts.scenario.resolution = resolution(g);
    opts.samples = f.samples;
    opts.threads = g.threads;
    opts.gamma = g.gamma;
    opts.iterations = g.iters;
    opts.per_iteration = f.per_iteration;
    opts.global_grid = f.global_grid;
    opts.scale_source = f.scale_source == "rule" ? ttp::ScaleSource::rule : ttp::ScaleSource::truth;

    const auto start = std::chrono::steady_clock::now();
    const ttp::ExperimentReport report = ttp::run_bench(opts);
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const ttp::Json summary = ttp::report_summary_json(report);
    std::vector<std::pair<std::string, std::string>> files = {{"report.csv", ttp::report_csv(report)},
                                                              {"summary.json", ttp::dump_json(summary)}};
    if (f.per_iteration) {
        files.emplace_back("per_iteration.csv", ttp::per_iteration_csv(report));
    }
    if (!f.no_meta) {
        ttp::Json meta;
        meta["threads"] = g.threads;
        meta["elapsed_seconds"] = elapsed;
        meta["finished_unix_time"] = static_cast<std::int64_t>(std::time(nullptr));
        files.emplace_back("meta.json", ttp::dump_json(meta));
    }
    write_outputs(g.out_dir, files);
    std::printf("%zu samples: %zu ok, %zu not converged, %zu errors\n", report.rows.size(),
                summary["ok"].get<std::size_t>(), summary["not_converged"].get<std::size_t>(),
                summary["errors"].get<std::size_t>());
    for (const auto& [name, stats] : summary["columns"].items()) {
        std::printf("  %-15s mean %-24s median %-24s stddev %s\n", name.c_str(),
                    ttp::format_double(stats["mean"].get<double>()).c_str(),
                    ttp::format_double(stats["median"].get<double>()).c_str(),
                    ttp::format_double(stats["stddev"].get<double>()).c_str());
    }
    return exit_ok;
}

// -- losses ------------------------------------------------------------------

struct LossFlags
{
    ProblemFiles files;
    std::string result;
    std::string mask;
    std::string truth;
    std::string regressor;
    std::string annotations;
};

ttp::SilhouetteMask load_mask(const std::string& path)
{
    const std::string bytes = ttp::read_file(path);
    if (bytes.rfind("P5", 0) == 0) {
        std::istringstream in(bytes);
        return ttp::read_pgm(in);
    }
    return ttp::parse_mask_rle(bytes);
}

int run_losses(const GlobalFlags& g, const LossFlags& f)
{
    const ttp::FitProblem problem = load_problem(g, f.files);
    const ttp::FitResult result = ttp::parse_fit_result(ttp::read_file(f.result));
    if (result.c.size() != problem.component_count()) {
        throw ttp::DimensionMismatch("result has " + std::to_string(result.c.size()) + " coefficients, basis has "
                                     + std::to_string(problem.component_count()));
    }
    std::optional<ttp::SilhouetteMask> mask;
    if (!f.mask.empty()) {
        mask = load_mask(f.mask);
    }
    std::optional<ttp::GroundTruth> truth;
    if (!f.truth.empty()) {
        truth = ttp::parse_truth(ttp::read_file(f.truth));
    }
    std::optional<ttp::KeypointRegressor> regressor;
    ttp::Points2 annotations;
    if (!f.regressor.empty() || !f.annotations.empty()) {
        if (f.regressor.empty() || f.annotations.empty()) {
            throw ttp::Error("keypoint loss needs both --regressor and --annotations");
        }
        regressor = ttp::parse_keypoint_regressor(ttp::read_file(f.regressor));
        annotations = ttp::parse_annotations(ttp::read_file(f.annotations));
    }

    const ttp::Vertices& T = problem.template_vertices();
    const ttp::Vertices V = ttp::synthesize(T, problem.basis, result.c);
    const Eigen::Matrix3d R = ttp::exp_map(result.r);
    const ttp::WeakPerspectiveCamera camera = result.camera();
    const ttp::Points2 projected = ttp::project(camera, R, V);
    const ttp::Resolution res = mask ? ttp::Resolution{mask->width, mask->height} : resolution(g);

    ttp::Json out;
    out["cycle"] = ttp::cycle_loss(problem.observation.points, projected);
    const ttp::Weights v_gt = ttp::render_visibility(V, problem.mesh->faces(), camera, R, res);
    out["visibility"] = ttp::visibility_loss(problem.observation.visibility, v_gt);
    out["arap"] = ttp::arap_energy(*problem.mesh, V);
    out["l2_deformation"] = ttp::l2_deformation_penalty(problem.basis, result.c);
    if (mask) {
        const ttp::DistanceField field = ttp::build_distance_field(*mask);
        const ttp::ChamferTerms chamfer = ttp::chamfer_loss(problem.observation.points, *mask, field);
        out["chamfer_consistency"] = chamfer.consistency;
        out["chamfer_coverage"] = chamfer.coverage;
        const ttp::SilhouetteOverlap overlap =
            ttp::silhouette_iou(ttp::rasterize_silhouette(V, problem.mesh->faces(), camera, R, res), *mask);
        out["silhouette_iou"] = overlap.iou;
        out["mask_abs_difference"] = overlap.abs_difference;
    }
    if (regressor) {
        out["keypoints"] = ttp::keypoint_loss(*regressor, V, camera, R, annotations);
    }
    if (truth) {
        out["rotation_geodesic"] = ttp::geodesic_distance(R, ttp::exp_map(truth->r));
    }
    write_outputs(g.out_dir, {{"losses.json", ttp::dump_json(out)}});
    for (auto it = out.begin(); it != out.end(); ++it) {
        std::printf("%-20s %s\n", it.key().c_str(), ttp::format_double(it.value().get<double>()).c_str());
    }
    return exit_ok;
}

void add_problem_files(CLI::App* cmd, ProblemFiles& files, bool required)
{
    auto* m = cmd->add_option("--mesh", files.mesh, "template mesh: OBJ path or builtin (tetra, icosphere(L), sphere(N), grid(W,H))");
    auto* b = cmd->add_option("--basis", files.basis, "basis file (JSON or TTPB binary)");
    auto* o = cmd->add_option("--observation", files.observation, "observation JSON");
    if (required) {
        m->required();
        b->required();
        o->required();
    }
    cmd->add_option("--scale-weighting", files.weighting, "points entering the scale estimate")
        ->check(CLI::IsMember({"visibility", "uniform"}))
        ->capture_default_str();
}

void add_scenario(CLI::App* cmd, SynthFlags& f)
{
    cmd->add_option("--mesh", f.mesh, "builtin mesh or OBJ path")->capture_default_str();
    cmd->add_option("--noise", f.noise, "observation noise sigma as a fraction of s")->check(CLI::NonNegativeNumber)->capture_default_str();
    cmd->add_option("--occlusion", f.occlusion, "fraction of points forced to v = 0")->check(CLI::Range(0.0, 0.999999))->capture_default_str();
    cmd->add_option("--cone", f.cone, "max ground-truth rotation angle, degrees")->capture_default_str();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"ttp: weak-perspective pose and low-rank deformation fitting"};
    app.require_subcommand(1);
    app.fallthrough();
    app.config_formatter(std::make_shared<JsonConfig>());
    app.set_config("--config", "", "JSON file mirroring the flags; flags on the command line win");

    GlobalFlags g;
    app.add_option("--iters", g.iters, "outer alternations")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--k", g.k, "basis components (synth/bench default 16, gradcheck default 2)")->check(CLI::NonNegativeNumber);
    app.add_option("--gamma", g.gamma, "coefficient regularizer")->check(CLI::NonNegativeNumber)->capture_default_str();
    app.add_option("--seed", g.seed, "random seed")->capture_default_str();
    app.add_option("--res", g.res, "rasterizer resolution (square)")->check(CLI::Range(8, 1 << 14))->capture_default_str();
    app.add_option("--threads", g.threads, "bench worker threads")->check(CLI::PositiveNumber)->capture_default_str();
    app.add_option("--out-dir", g.out_dir, "output directory")->capture_default_str();

    SynthFlags synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic problem and its ground truth");
    add_scenario(synth_cmd, synth);

    FitFlags fitf;
    auto* fit_cmd = app.add_subcommand("fit", "fit pose and deformation to an observation");
    add_problem_files(fit_cmd, fitf.files, true);
    fit_cmd->add_option("--scale", fitf.scale, "known camera scale (skips the estimate)")->check(CLI::PositiveNumber);
    fit_cmd->add_option("--truth", fitf.truth, "ground-truth JSON: uses its scale and reports errors");
    fit_cmd->add_flag("--polish", fitf.polish, "joint Newton refinement after the alternation");
    fit_cmd->add_flag("--global-grid", fitf.global_grid, "best of 24 cube-rotation starts");

    GradcheckFlags gc;
    auto* gc_cmd = app.add_subcommand("gradcheck", "implicit-differentiation gradients vs finite differences");
    add_problem_files(gc_cmd, gc.files, false);
    gc_cmd->add_option("--n", gc.n, "vertices of the synthetic sphere")->check(CLI::Range(4, 100000))->capture_default_str();
    gc_cmd->add_option("--noise", gc.noise, "synthetic noise sigma as a fraction of s")->check(CLI::NonNegativeNumber)->capture_default_str();
    gc_cmd->add_option("--step", gc.step, "finite-difference step")->check(CLI::Range(1e-7, 1e-3))->capture_default_str();
    gc_cmd->add_option("--tolerance", gc.tolerance, "max relative error per block")->check(CLI::PositiveNumber)->capture_default_str();
    gc_cmd->add_option("--coords", gc.coordinates, "finite-difference coordinates per block")->check(CLI::PositiveNumber)->capture_default_str();

    BenchFlags bench;
    auto* bench_cmd = app.add_subcommand("bench", "batch of synthetic fits with error statistics");
    add_scenario(bench_cmd, bench.synth);
    bench_cmd->add_option("--samples", bench.samples, "number of scenarios (seeds seed..seed+samples-1)")->check(CLI::PositiveNumber)->capture_default_str();
    bench_cmd->add_flag("--per-iteration", bench.per_iteration, "metrics at every outer iteration");
    bench_cmd->add_flag("--global-grid", bench.global_grid, "best of 24 cube-rotation starts");
    bench_cmd->add_flag("--no-meta", bench.no_meta, "skip meta.json (timing, thread count)");
    bench_cmd->add_option("--scale-source", bench.scale_source, "camera scale handed to the solver")
        ->check(CLI::IsMember({"truth", "rule"}))
        ->capture_default_str();

    LossFlags lf;
    auto* loss_cmd = app.add_subcommand("losses", "evaluate the loss suite on a fit result");
    add_problem_files(loss_cmd, lf.files, true);
    loss_cmd->add_option("--result", lf.result, "fit result JSON")->required();
    loss_cmd->add_option("--mask", lf.mask, "silhouette (RLE JSON or PGM)");
    loss_cmd->add_option("--truth", lf.truth, "ground-truth JSON for the rotation term");
    loss_cmd->add_option("--regressor", lf.regressor, "keypoint regressor JSON");
    loss_cmd->add_option("--annotations", lf.annotations, "keypoint annotation JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_input;
    }

    try {
        if (*synth_cmd) {
            return run_synth(g, synth);
        }
        if (*fit_cmd) {
            return run_fit(g, fitf);
        }
        if (*gc_cmd) {
            return run_gradcheck(g, gc);
        }
        if (*bench_cmd) {
            return run_bench(g, bench);
        }
        if (*loss_cmd) {
            return run_losses(g, lf);
        }
    } catch (const ttp::SingularHessian& e) {
        std::fprintf(stderr, "singular: %s (condition number %s)\n", e.what(), ttp::format_double(e.condition_number()).c_str());
        return exit_singular;
    } catch (const ttp::SingularSystem& e) {
        std::fprintf(stderr, "singular: %s\n", e.what());
        return exit_singular;
    } catch (const ttp::NotStationary& e) {
        std::fprintf(stderr, "not converged: %s\n", e.what());
        return exit_not_converged;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_input;
    }
    return exit_input;
}
