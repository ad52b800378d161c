#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cvid/cli.hpp"
#include "test_util.hpp"

using namespace cvid;
using cvid::test::read_bytes;
using cvid::test::TempDir;

namespace {

struct CliResult {
    int code;
    std::string out, err;
};

CliResult invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "cvid");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

int subprocess(const std::string& args) {
    const std::string cmd = std::string(CVID_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::vector<std::string>> csv_rows(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string line;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

// Small dataset plus a small trained checkpoint shared by the derain tests.
class CliPipeline : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir("clipipe");
        const std::string d = dir_->path().string();
        ASSERT_EQ(invoke({"synth", "--clean-dir", d + "/clean", "--generate-clean", "2", "--scene-size", "40", "--out-dir",
                       d + "/ds", "--count", "6", "--patch-size", "16", "--seed", "3"})
                      .code,
                  0);
        ASSERT_EQ(invoke({"train", "--manifest", d + "/ds/manifest.json", "--out", d + "/run", "--epochs", "1",
                       "--batch-size", "3", "--patch-size", "16", "--depth", "2", "--filters", "4", "--sde-layers", "2"})
                      .code,
                  0);
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static std::string path(const std::string& rel) { return (dir_->path() / rel).string(); }
    static TempDir* dir_;
};
TempDir* CliPipeline::dir_ = nullptr;

}  // namespace

TEST(CliSynth, SinglePair) {
    TempDir dir("cli");
    const std::string d = dir.path().string();
    const CliResult r = invoke({"synth", "--clean-dir", d + "/c", "--generate-clean", "1", "--scene-size", "32", "--out-dir",
                       d + "/o", "--count", "1", "--patch-size", "16"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("manifest.json"), std::string::npos);
    for (const char* f : {"clean/00000.png", "rainy/00000.png", "density/00000_R.png", "density/00000_G.png",
                          "density/00000_B.png", "manifest.json"})
        EXPECT_TRUE(std::filesystem::exists(dir / ("o/" + std::string(f)))) << f;
    EXPECT_EQ(load_manifest(dir / "o" / "manifest.json").count(), 1u);
}

TEST(CliSynth, MissingCleanDirIsUsageError) {
    EXPECT_EQ(invoke({"synth", "--out-dir", "/tmp/x"}).code, 2);
    EXPECT_EQ(subprocess("synth --out-dir /tmp/cvid_unused"), 2);
}

TEST(CliSynth, InvalidRangeIsUsageError) {
    TempDir dir("cli");
    const std::string d = dir.path().string();
    EXPECT_EQ(invoke({"synth", "--clean-dir", d, "--out-dir", d + "/o", "--length", "9", "3"}).code, 2);
}

TEST(CliSynth, SameSeedSameManifest) {
    TempDir dir("cli");
    const std::string d = dir.path().string();
    for (const char* o : {"a", "b"})
        ASSERT_EQ(invoke({"synth", "--clean-dir", d + "/c", "--generate-clean", "2", "--scene-size", "32", "--out-dir",
                       d + "/" + o, "--count", "4", "--patch-size", "16", "--seed", "12"})
                      .code,
                  0);
    EXPECT_EQ(read_bytes(dir / "a/manifest.json"), read_bytes(dir / "b/manifest.json"));
    EXPECT_EQ(read_bytes(dir / "a/rainy/00003.png"), read_bytes(dir / "b/rainy/00003.png"));
}

TEST(CliTrain, ZeroEpochsIsUsageError) {
    EXPECT_EQ(invoke({"train", "--manifest", "m.json", "--out", "/tmp/x", "--epochs", "0"}).code, 2);
    EXPECT_EQ(subprocess("train --manifest m.json --out /tmp/cvid_unused --epochs 0"), 2);
}

TEST(CliTrain, TinyRunWritesLoadableCheckpoint) {
    TempDir dir("cli");
    const std::string d = dir.path().string();
    ASSERT_EQ(invoke({"synth", "--clean-dir", d + "/c", "--generate-clean", "4", "--scene-size", "64", "--out-dir",
                   d + "/ds", "--count", "200", "--patch-size", "32", "--seed", "1"})
                  .code,
              0);
    const CliResult r = invoke({"train", "--manifest", d + "/ds/manifest.json", "--out", d + "/run", "--epochs", "1", "--seed", "1"});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto model = load_checkpoint<float>(dir / "run" / "model.cvid");
    EXPECT_EQ(model.config(), NetworkConfig{});
    EXPECT_EQ(model.meta().step, 7);
    EXPECT_EQ(model.meta().epoch, 1);
}

TEST(CliTrain, MissingManifestIsRuntimeFailure) {
    TempDir dir("cli");
    EXPECT_EQ(invoke({"train", "--manifest", (dir / "none.json").string(), "--out", (dir / "o").string()}).code, 1);
}

TEST_F(CliPipeline, TrainLogHeaderEchoesDefaults) {
    std::ifstream in(path("run/train_log.jsonl"));
    std::string first;
    ASSERT_TRUE(std::getline(in, first));
    const auto j = nlohmann::json::parse(first);
    EXPECT_EQ(j.at("type"), "config");
    EXPECT_EQ(j.at("beta").get<double>(), 0.1);
    EXPECT_EQ(j.at("lambda").get<double>(), 1.0);
    EXPECT_EQ(j.at("lr").get<double>(), 0.01);
    EXPECT_EQ(j.at("weight_decay").get<double>(), 1e-10);
    int steps = 0, epochs = 0;
    for (std::string line; std::getline(in, line);) {
        const auto r = nlohmann::json::parse(line);
        steps += r.at("type") == "step";
        epochs += r.at("type") == "epoch";
    }
    EXPECT_EQ(steps, 2);
    EXPECT_EQ(epochs, 1);
    EXPECT_TRUE(std::filesystem::exists(path("run/checkpoints/checkpoint_epoch1_step2.cvid")));
}

TEST_F(CliPipeline, DefaultSampleCountIsOneHundred) {
    const CliResult r = invoke({"derain", "--checkpoint", path("run/model.cvid"), "--input", path("ds/rainy/00000.png"), "--out",
                       path("d100"), "--emit-intermediates"});
    ASSERT_EQ(r.code, 0) << r.err;
    int n = 0;
    for (const auto& e : std::filesystem::directory_iterator(path("d100/intermediates"))) n += e.is_regular_file();
    EXPECT_EQ(n, 100);
    EXPECT_TRUE(std::filesystem::exists(path("d100/00000.png")));
}

TEST_F(CliPipeline, SingleSampleEqualsItsIntermediate) {
    const CliResult r = invoke({"derain", "--checkpoint", path("run/model.cvid"), "--input", path("ds/rainy/00001.png"), "--out",
                       path("d1"), "--samples", "1", "--emit-intermediates"});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(load_image(path("d1/00001.png")), load_image(path("d1/intermediates/00001_s0001.png")));
}

TEST_F(CliPipeline, ManifestDerainIsDeterministicAndReports) {
    for (const char* o : {"ma", "mb"}) {
        const CliResult r = invoke({"derain", "--checkpoint", path("run/model.cvid"), "--input", path("ds/manifest.json"),
                           "--out", path(o), "--samples", "3", "--seed", "5"});
        ASSERT_EQ(r.code, 0) << r.err;
    }
    EXPECT_EQ(read_bytes(path("ma/report.csv")), read_bytes(path("mb/report.csv")));
    EXPECT_EQ(read_bytes(path("ma/00004.png")), read_bytes(path("mb/00004.png")));
    EXPECT_EQ(csv_rows(path("ma/report.csv")).size(), 1u + 6u + 1u);
}

TEST_F(CliPipeline, CorruptCheckpointExitsOne) {
    std::string bytes = read_bytes(path("run/model.cvid"));
    bytes[bytes.size() / 2] ^= 0x11;
    std::ofstream(path("bad.cvid"), std::ios::binary) << bytes;
    EXPECT_EQ(invoke({"derain", "--checkpoint", path("bad.cvid"), "--input", path("ds/rainy"), "--out", path("bad")}).code, 1);
    EXPECT_EQ(subprocess("derain --checkpoint " + path("bad.cvid") + " --input " + path("ds/rainy") + " --out " + path("bad")), 1);
}

TEST_F(CliPipeline, EvalIdenticalPairs) {
    const std::string clean = path("ds/clean");
    const CliResult r = invoke({"eval", "--pairs", clean, clean, "--out", path("eval/same.csv"), "--ced-dir", path("eval/ced")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = csv_rows(path("eval/same.csv"));
    ASSERT_EQ(rows.size(), 1u + 6u + 1u);
    ASSERT_EQ(rows[0][1], "psnr");
    ASSERT_EQ(rows[0][2], "ssim");
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_EQ(std::stod(rows[i][1]), 100.0);
        EXPECT_NEAR(std::stod(rows[i][2]), 1.0, 1e-12);
    }
    EXPECT_TRUE(std::filesystem::exists(path("eval/ced/00000_ced_G.txt")));
}

TEST_F(CliPipeline, EvalManifestAggregateIsMean) {
    const CliResult r = invoke({"eval", "--pairs", path("ds/manifest.json"), "--metrics", "psnr,ssim", "--out", path("eval/rainy.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto rows = csv_rows(path("eval/rainy.csv"));
    ASSERT_EQ(rows.size(), 1u + 6u + 1u);
    ASSERT_EQ(rows[0].size(), 3u);
    double mean = 0;
    for (int i = 1; i <= 6; ++i) mean += std::stod(rows[i][1]) / 6.0;
    EXPECT_EQ(rows.back()[0], "aggregate");
    EXPECT_NEAR(std::stod(rows.back()[1]), mean, 1e-9);
}

TEST(CliEval, NoPairsIsUsageError) {
    TempDir dir("cli");
    std::filesystem::create_directories(dir / "a");
    std::filesystem::create_directories(dir / "b");
    EXPECT_EQ(invoke({"eval", "--pairs", (dir / "a").string(), (dir / "b").string(), "--out", (dir / "r.csv").string()}).code, 2);
    EXPECT_EQ(invoke({"eval", "--out", (dir / "r.csv").string()}).code, 2);
    EXPECT_EQ(invoke({"eval", "--pairs", (dir / "a").string(), (dir / "b").string(), "--metrics", "psnr,niqe", "--out",
                   (dir / "r.csv").string()})
                  .code,
              2);
}

TEST(CliCheck, PassesOnFreshBuild) {
    const CliResult r = invoke({"check"});
    EXPECT_EQ(r.code, 0) << r.out;
    EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 5);
    EXPECT_EQ(r.out.find("[FAIL]"), std::string::npos);
}

TEST(CliCheck, CorruptedKlIsCaught) {
    checks::Hooks bad;
    bad.kl = [](const GaussianLatent& q, const GaussianLatent& p) { return 1.05 * kl_gaussian(q, p) + 0.01; };
    std::ostringstream out;
    EXPECT_EQ(checks::report({checks::check_kl_oracle(bad, 20, 200'000)}, out), 1);
    EXPECT_NE(out.str().find("[FAIL]"), std::string::npos);
}

TEST(Cli, UnknownFlagAndSubcommand) {
    EXPECT_EQ(invoke({"check", "--bogus"}).code, 2);
    EXPECT_EQ(invoke({"frobnicate"}).code, 2);
    EXPECT_EQ(invoke({}).code, 2);
    EXPECT_EQ(invoke({"--help"}).code, 0);
}
