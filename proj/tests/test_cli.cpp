#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <gtest/gtest.h>

#include <json.hpp>

#include "cli.hpp"
#include "lpe/storage.hpp"

namespace lpe {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result call(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::string kBlobs = "K=3,d=2,n=40,spread=0.8,seed=4";

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir = fs::temp_directory_path() /
              ("lpe_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    std::string path(const std::string& name) const { return (dir / name).string(); }

    std::string train(const std::string& name, const std::string& seed = "1") {
        const auto r = call({"train", "--blobs", kBlobs, "--layers", "2,16,3", "--epochs", "5", "--seed", seed,
                             "--out", path(name)});
        EXPECT_EQ(r.code, 0) << r.err;
        return path(name);
    }

    fs::path dir;
};

TEST_F(CliTest, TrainWritesCheckpointAndReport) {
    const auto r = call({"train", "--blobs", kBlobs, "--layers", "2,16,3", "--epochs", "3", "--out", path("m.lpe1")});
    ASSERT_EQ(r.code, 0) << r.err;
    const json report = json::parse(r.out);
    EXPECT_EQ(report["command"], "train");
    EXPECT_TRUE(report.contains("wall_time_ms"));
    EXPECT_EQ(report["artifact_paths"][0], path("m.lpe1"));
    EXPECT_EQ(load_checkpoint(path("m.lpe1")).spec.layer_dims, (std::vector<std::size_t>{2, 16, 3}));
}

TEST_F(CliTest, TrainUsageErrors) {
    EXPECT_EQ(call({"train", "--blobs", kBlobs, "--layers", "2,16,3"}).code, 2);
    EXPECT_EQ(call({"train", "--layers", "2,16,3", "--out", path("m.lpe1")}).code, 2);
    EXPECT_EQ(call({"train", "--blobs", "K=3,q=2", "--layers", "2,16,3", "--out", path("m.lpe1")}).code, 2);
    EXPECT_EQ(call({"frobnicate"}).code, 2);
    EXPECT_EQ(call({}).code, 2);
}

TEST_F(CliTest, ZeroEpochsGivesInitialization) {
    const auto r = call({"train", "--blobs", kBlobs, "--layers", "2,8,3", "--epochs", "0", "--seed", "5", "--out",
                         path("m.lpe1")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(load_checkpoint(path("m.lpe1")), init_checkpoint(ModelSpec::mlp({2, 8, 3}), 5));
}

TEST_F(CliTest, LayerWidthMustMatchData) {
    EXPECT_EQ(call({"train", "--blobs", kBlobs, "--layers", "3,8,3", "--out", path("m.lpe1")}).code, 1);
}

TEST_F(CliTest, EnsembleWritesMembersAndManifest) {
    const auto ckpt = train("m.lpe1");
    const auto r = call({"ensemble", "--ckpt", ckpt, "--method", "bsr", "--bits", "5", "--size", "10", "--seed", "3",
                         "--out-dir", path("ens")});
    ASSERT_EQ(r.code, 0) << r.err;
    std::size_t members = 0;
    for (const auto& entry : fs::directory_iterator(dir / "ens")) {
        members += entry.path().filename().string().starts_with("member_");
    }
    EXPECT_EQ(members, 10u);
    EXPECT_TRUE(fs::exists(dir / "ens" / "manifest.json"));
    EXPECT_TRUE(fs::exists(dir / "ens" / "shared.lpe1"));
    const json report = json::parse(r.out);
    EXPECT_EQ(report["member_seeds"].size(), 10u);
}

TEST_F(CliTest, EnsembleRejectsRtnWithSeveralMembers) {
    const auto ckpt = train("m.lpe1");
    const auto r = call({"ensemble", "--ckpt", ckpt, "--method", "rtn", "--bits", "5", "--size", "3", "--out-dir",
                         path("ens")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("rtn"), std::string::npos);
    EXPECT_EQ(call({"ensemble", "--ckpt", ckpt, "--method", "bsr", "--size", "3", "--out-dir", path("e2")}).code, 1);
    EXPECT_EQ(call({"ensemble", "--ckpt", path("missing.lpe1"), "--method", "rtn", "--bits", "4", "--out-dir",
                    path("e3")})
                  .code,
              1);
}

TEST_F(CliTest, EnsembleIsByteReproducible) {
    const auto ckpt = train("m.lpe1");
    for (const std::string out : {"a", "b"}) {
        ASSERT_EQ(call({"ensemble", "--ckpt", ckpt, "--bits", "4", "--size", "4", "--seed", "9", "--out-dir",
                        path(out)})
                      .code,
                  0);
    }
    for (const auto& entry : fs::directory_iterator(dir / "a")) {
        const auto name = entry.path().filename();
        if (name == "manifest.json") continue;
        EXPECT_EQ(slurp(entry.path()), slurp(dir / "b" / name)) << name;
    }
}

TEST_F(CliTest, EvalSingleCheckpointHasNoAmbiguity) {
    const auto ckpt = train("m.lpe1");
    const auto r = call({"eval", "--ckpt", ckpt, "--blobs", kBlobs});
    ASSERT_EQ(r.code, 0) << r.err;
    const json report = json::parse(r.out);
    EXPECT_FALSE(report["metrics"].contains("ambiguity"));
    EXPECT_EQ(report["metrics"]["nll"], report["metrics"]["avg_loss"]);
    EXPECT_EQ(report["per_member_nll"].size(), 1u);
    EXPECT_EQ(report["memory_bits"], 32 * (16 * 3 + 3 * 17));
}

TEST_F(CliTest, EvalDuplicatedMembersHaveZeroAmbiguity) {
    const auto ckpt = train("m.lpe1");
    // Three copies of one BSR draw.
    MemberSet ms = generate_members(load_checkpoint(ckpt), EnsembleSpec::lpe_bsr(4, 3, 0));
    for (std::size_t s = 1; s < 3; ++s) ms.members[s].layers = ms.members[0].layers;
    save_member_set(dir / "ens", ms);
    const auto r = call({"eval", "--members", path("ens/manifest.json"), "--blobs", kBlobs});
    ASSERT_EQ(r.code, 0) << r.err;
    const json report = json::parse(r.out);
    EXPECT_NEAR(report["metrics"]["ambiguity"].get<double>(), 0.0, 1e-12);
}

TEST_F(CliTest, EvalIsReproducible) {
    const auto ckpt = train("m.lpe1");
    ASSERT_EQ(call({"ensemble", "--ckpt", ckpt, "--bits", "4", "--size", "5", "--out-dir", path("ens")}).code, 0);
    const auto first = call({"eval", "--members", path("ens/manifest.json"), "--blobs", kBlobs});
    const auto second = call({"eval", "--members", path("ens/manifest.json"), "--blobs", kBlobs});
    ASSERT_EQ(first.code, 0) << first.err;
    json a = json::parse(first.out), b = json::parse(second.out);
    a.erase("wall_time_ms");
    b.erase("wall_time_ms");
    EXPECT_EQ(a, b);
    EXPECT_TRUE(a["metrics"].contains("ambiguity"));
    EXPECT_EQ(a["per_member_nll"].size(), 5u);
}

TEST_F(CliTest, EvalSweepEmitsOneEntryPerWidth) {
    const auto ckpt = train("m.lpe1");
    const auto r = call({"eval", "--ckpt", ckpt, "--blobs", kBlobs, "--bits-list", "6,5,4", "--size", "3", "--json",
                         path("sweep.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    const json report = json::parse(r.out);
    ASSERT_TRUE(report.is_array());
    ASSERT_EQ(report.size(), 3u);
    EXPECT_EQ(report[0]["bits"], 6);
    EXPECT_EQ(report[2]["bits"], 4);
    EXPECT_EQ(json::parse(slurp(dir / "sweep.json")), report);
    EXPECT_EQ(call({"eval", "--members", path("x.json"), "--blobs", kBlobs, "--bits-list", "4"}).code, 2);
    EXPECT_EQ(call({"eval", "--ckpt", ckpt}).code, 2);
}

TEST_F(CliTest, LandscapeWritesGridAndAnchors) {
    const auto a = train("a.lpe1", "1"), b = train("b.lpe1", "2"), c = train("c.lpe1", "3");
    const auto r = call({"landscape", "--a", a, "--b", b, "--c", c, "--blobs", kBlobs, "--grid", "6", "--out",
                         path("grid.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream grid(dir / "grid.csv");
    std::string line;
    std::size_t rows = 0;
    std::getline(grid, line);
    EXPECT_EQ(line, "alpha,beta,nll,disagree_1,disagree_2");
    while (std::getline(grid, line)) ++rows;
    EXPECT_EQ(rows, 36u);
    ASSERT_TRUE(fs::exists(dir / "grid.anchors.csv"));

    const json report = json::parse(r.out);
    const auto ev = call({"eval", "--ckpt", a, "--blobs", kBlobs});
    const double direct = json::parse(ev.out)["metrics"]["nll"];
    EXPECT_NEAR(report["anchors"][0]["nll"].get<double>(), direct, 1e-6);
}

TEST_F(CliTest, LandscapeRejectsCollinearAnchors) {
    const auto a = train("a.lpe1");
    const auto r = call({"landscape", "--a", a, "--b", a, "--c", a, "--blobs", kBlobs, "--out", path("grid.csv")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("coincide"), std::string::npos);
}

TEST(Cli, HelpExitsCleanly) { EXPECT_EQ(call({"--help"}).code, 0); }

}  // namespace
}  // namespace lpe
