/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: tests/test_cli.cpp
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
#include "ttp/harness.hpp"
#include "ttp/io.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace ttp;

namespace {

class Cli : public ::testing::Test
{
protected:
    void SetUp() override
    {
        dir_ = fs::temp_directory_path() / ("ttp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }

    void TearDown() override { fs::remove_all(dir_); }

    /// Runs the tool inside the test directory; returns its exit code.
    int run(const std::string& args)
    {
        const std::string cmd = "cd '" + dir_.string() + "' && '" TTP_CLI "' " + args + " > stdout.txt 2> stderr.txt";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }

    std::string file(const std::string& name) const { return read_file((dir_ / name).string()); }
    fs::path path(const std::string& name) const { return dir_ / name; }

    fs::path dir_;
};

} // namespace

TEST_F(Cli, SynthWritesProblemFiles)
{
    ASSERT_EQ(run("--seed 4 --k 3 --out-dir data synth"), 0) << file("stderr.txt");
    for (const char* name : {"mesh.obj", "basis.json", "observation.json", "truth.json", "mask.pgm", "mask.json"}) {
        EXPECT_TRUE(fs::exists(path("data") / name)) << name;
    }
    const GroundTruth gt = parse_truth(file("data/truth.json"));
    EXPECT_EQ(gt.c.size(), 3);
    SyntheticScenario sc;
    sc.seed = 4;
    sc.components = 3;
    EXPECT_EQ(parse_observation(file("data/observation.json")).points, generate_synthetic(sc).observation.points);
}

TEST_F(Cli, FitRecoversSyntheticTruth)
{
    ASSERT_EQ(run("--seed 5 --k 4 --out-dir data synth"), 0);
    ASSERT_EQ(run("--out-dir out fit --mesh data/mesh.obj --basis data/basis.json --observation data/observation.json "
                  "--truth data/truth.json"),
              0)
        << file("stderr.txt");
    const FitResult r = parse_fit_result(file("out/result.json"));
    const GroundTruth gt = parse_truth(file("data/truth.json"));
    EXPECT_LT(geodesic_distance(exp_map(r.r), exp_map(gt.r)), 1e-4);
    EXPECT_LT((r.c - gt.c).cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_EQ(r.s, gt.s);
    EXPECT_EQ(r.objective_trace.size(), 4u);
    EXPECT_EQ(file("out/trace.csv").rfind("iteration,objective\n1,", 0), 0u);
}

TEST_F(Cli, LossesOfTheTruthAreZero)
{
    ASSERT_EQ(run("--seed 6 --k 2 --out-dir data synth"), 0);
    const GroundTruth gt = parse_truth(file("data/truth.json"));
    FitResult r;
    r.r = gt.r;
    r.t = gt.t;
    r.s = gt.s;
    r.c = gt.c;
    write_file(path("truth_result.json").string(), dump_json(fit_result_to_json(r)));
    ASSERT_EQ(run("--out-dir out losses --mesh data/mesh.obj --basis data/basis.json --observation data/observation.json "
                  "--result truth_result.json --mask data/mask.pgm --truth data/truth.json"),
              0)
        << file("stderr.txt");
    const Json j = Json::parse(file("out/losses.json"));
    EXPECT_LT(j["cycle"].get<double>(), 1e-18);
    EXPECT_EQ(j["visibility"].get<double>(), 0.0);
    EXPECT_EQ(j["silhouette_iou"].get<double>(), 1.0);
    EXPECT_EQ(j["rotation_geodesic"].get<double>(), 0.0);
    EXPECT_GE(j["arap"].get<double>(), 0.0);
}

TEST_F(Cli, BenchOutputsAndMeta)
{
    ASSERT_EQ(run("--seed 7 --k 2 --out-dir b bench --samples 3 --per-iteration"), 0) << file("stderr.txt");
    for (const char* name : {"report.csv", "summary.json", "per_iteration.csv", "meta.json"}) {
        EXPECT_TRUE(fs::exists(path("b") / name)) << name;
    }
    const std::string csv = file("b/report.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_EQ(Json::parse(file("b/summary.json"))["samples"], 3);
    ASSERT_EQ(run("--seed 7 --k 2 --out-dir c bench --samples 3 --no-meta"), 0);
    EXPECT_FALSE(fs::exists(path("c/meta.json")));
    EXPECT_EQ(file("c/report.csv"), csv);
}

TEST_F(Cli, GradcheckExitCodes)
{
    EXPECT_EQ(run("gradcheck --n 30"), 0) << file("stdout.txt") << file("stderr.txt");
    EXPECT_EQ(run("gradcheck --n 30 --tolerance 1e-12"), 4) << file("stdout.txt");
}

TEST_F(Cli, BadInputExitsWithOne)
{
    EXPECT_EQ(run("fit --mesh missing.obj --basis b.json --observation o.json"), 1);
    EXPECT_EQ(run("--no-such-flag synth"), 1);
    EXPECT_EQ(run("losses"), 1);
    write_file(path("obs.json").string(), "{\n  \"points\": [[0, 0]],\n  \"visibility\": [2]\n}\n");
    ASSERT_EQ(run("--out-dir data synth --k 1"), 0);
    EXPECT_EQ(run("fit --mesh data/mesh.obj --basis data/basis.json --observation obs.json"), 1);
    EXPECT_NE(file("stderr.txt").find("line 3"), std::string::npos) << file("stderr.txt");
    EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, ConfigFileSetsFlags)
{
    write_file(path("config.json").string(), "{\n  \"seed\": 9,\n  \"k\": 2,\n  \"out-dir\": \"cfg\",\n  \"synth\": {\"noise\": 0.01}\n}\n");
    ASSERT_EQ(run("--config config.json synth"), 0) << file("stderr.txt");
    ASSERT_EQ(run("--seed 9 --k 2 --out-dir flags synth --noise 0.01"), 0);
    EXPECT_EQ(file("cfg/observation.json"), file("flags/observation.json"));
    ASSERT_EQ(run("--config config.json --seed 10 synth"), 0);
    EXPECT_NE(file("cfg/observation.json"), file("flags/observation.json"));
    write_file(path("broken.json").string(), "{ \"seed\": ");
    EXPECT_EQ(run("--config broken.json synth"), 1);
}
