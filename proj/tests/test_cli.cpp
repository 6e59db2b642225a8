#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bamnet/cli.hpp"
#include "bamnet/report.hpp"
#include "fixtures.hpp"

namespace bamnet {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct Outcome {
    int status;
    std::string out;
    std::string err;
};

Outcome run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int status = cli_dispatch(args, out, err);
    return {status, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

class CliTest : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir("cli");
        testing::write_texture_tree(data(), 16, 48, 9);
        nlohmann::json cfg = {{"epochs", 2},
                              {"batch_size", 8},
                              {"seed", 5},
                              {"model", {{"width", 8}, {"image_extent", 48}}}};
        std::ofstream(config()) << cfg.dump();
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static fs::path root() { return dir_->path(); }
    static fs::path data() { return root() / "data"; }
    static fs::path config() { return root() / "config.json"; }

    static TempDir* dir_;
};

TempDir* CliTest::dir_ = nullptr;

TEST_F(CliTest, FullPipelineOnFixtureTree) {
    const fs::path manifest = root() / "pipeline_manifest.json";
    const fs::path results = root() / "pipeline_results";
    auto r = run({"prep", data().string(), "--seed", "3", "--ratios", "0.5,0.25,0.25", "--out", manifest.string()});
    ASSERT_EQ(r.status, 0) << r.err;
    EXPECT_NE(r.out.find("train 16 / val 8 / test 8"), std::string::npos) << r.out;

    r = run({"train", manifest.string(), "--config", config().string(), "--results", results.string(), "--run-id",
             "smoke", "--quiet"});
    ASSERT_EQ(r.status, 0) << r.err;
    const fs::path run_dir = results / "smoke";
    for (const char* f : {"config.json", "log.csv", "checkpoint/model.json", "checkpoint/params.tnsr",
                          "checkpoint/optimizer.tnsr", "checkpoint/log.csv"}) {
        EXPECT_TRUE(fs::exists(run_dir / f)) << f;
    }

    r = run({"eval", (run_dir / "checkpoint").string(), manifest.string(), "--split", "test"});
    ASSERT_EQ(r.status, 0) << r.err;
    const auto metrics = nlohmann::json::parse(slurp(run_dir / "metrics.json"));
    EXPECT_EQ(metrics.at("samples").get<int>(), 8);
    for (const char* block : {"micro", "macro", "per_class"}) {
        for (const char* key : {"accuracy", "precision", "recall", "f1"}) {
            const double v = metrics.at(block).at(key).get<double>();
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    }

    r = run({"report", results.string()});
    ASSERT_EQ(r.status, 0) << r.err;
    EXPECT_EQ(r.out, slurp(results / "comparison.txt"));
    const auto rows = parse_comparison_csv(slurp(results / "comparison.csv"));
    ASSERT_EQ(rows.size(), 1U);
    EXPECT_TRUE(rows[0].best);
    EXPECT_NEAR(rows[0].ta, metrics.at("micro").at("accuracy").get<double>(), 5e-5);
    const std::string loss = slurp(run_dir / "loss.csv");
    EXPECT_EQ(loss.substr(0, loss.find('\n')), "epoch,train_loss,val_loss");
    EXPECT_EQ(std::count(loss.begin(), loss.end(), '\n'), 3);
    EXPECT_TRUE(fs::exists(run_dir / "accuracy.csv"));
}

TEST_F(CliTest, RepeatedRunsAreByteIdentical) {
    std::vector<std::string> manifests, files;
    for (int i = 0; i < 2; ++i) {
        const fs::path manifest = root() / ("repeat_manifest" + std::to_string(i) + ".json");
        const fs::path results = root() / ("repeat_results" + std::to_string(i));
        ASSERT_EQ(run({"prep", data().string(), "--seed", "11", "--out", manifest.string()}).status, 0);
        ASSERT_EQ(run({"train", manifest.string(), "--config", config().string(), "--results", results.string(),
                       "--quiet"})
                      .status,
                  0);
        const fs::path ck = results / "BAM-Inception-seed5" / "checkpoint";
        manifests.push_back(slurp(manifest));
        files.push_back(slurp(ck / "log.csv") + slurp(ck / "params.tnsr") + slurp(ck / "optimizer.tnsr") +
                        slurp(ck / "model.json"));
    }
    EXPECT_EQ(manifests[0], manifests[1]);
    EXPECT_EQ(files[0], files[1]);
}

TEST_F(CliTest, ChannelMismatchIsDataError) {
    const fs::path rgb = root() / "mismatch_rgb.json";
    const fs::path gray = root() / "mismatch_gray.json";
    const fs::path results = root() / "mismatch_results";
    ASSERT_EQ(run({"prep", data().string(), "--out", rgb.string()}).status, 0);
    ASSERT_EQ(run({"prep", data().string(), "--channels", "1", "--out", gray.string()}).status, 0);
    ASSERT_EQ(run({"train", rgb.string(), "--config", config().string(), "--results", results.string(), "--run-id",
                   "m", "--quiet"})
                  .status,
              0);
    const auto r = run({"eval", (results / "m" / "checkpoint").string(), gray.string()});
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.err.find("channel"), std::string::npos) << r.err;

    // A second run into the same directory is refused.
    EXPECT_EQ(run({"train", rgb.string(), "--config", config().string(), "--results", results.string(), "--run-id",
                   "m", "--quiet"})
                  .status,
              2);
}

TEST_F(CliTest, ResultsDirectoryFromEnvironment) {
    const fs::path results = root() / "env_results";
    const fs::path manifest = root() / "env_manifest.json";
    ASSERT_EQ(run({"prep", data().string(), "--out", manifest.string()}).status, 0);
    ::setenv(kResultsEnv, results.c_str(), 1);
    const auto r = run({"train", manifest.string(), "--config", config().string(), "--run-id", "env", "--quiet"});
    ::unsetenv(kResultsEnv);
    ASSERT_EQ(r.status, 0) << r.err;
    EXPECT_TRUE(fs::exists(results / "env" / "checkpoint" / "params.tnsr"));
}

TEST(Cli, UsageErrors) {
    auto r = run({"train", "m.json", "--bogus"});
    EXPECT_EQ(r.status, 1);
    EXPECT_NE((r.out + r.err).find("Usage"), std::string::npos) << r.out << r.err;
    EXPECT_EQ(run({}).status, 1);
    EXPECT_EQ(run({"frobnicate"}).status, 1);
    EXPECT_EQ(run({"prep"}).status, 1);
    EXPECT_EQ(run({"prep", "/nonexistent", "--ratios", "0.5,0.5"}).status, 1);
    EXPECT_EQ(run({"--help"}).status, 0);
}

TEST(Cli, MissingInputsAreDataErrors) {
    TempDir d("cli_missing");
    auto r = run({"prep", (d.path() / "nowhere").string(), "--out", (d.path() / "m.json").string()});
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.err.find("nowhere"), std::string::npos) << r.err;
    EXPECT_EQ(run({"train", (d.path() / "missing.json").string()}).status, 2);
    EXPECT_EQ(run({"report", d.path().string()}).status, 2);
}

TEST(Cli, GradcheckPasses) {
    const auto r = run({"gradcheck"});
    EXPECT_EQ(r.status, 0) << r.out;
    EXPECT_NE(r.out.find("max relative error"), std::string::npos);
}

}  // namespace
}  // namespace bamnet
