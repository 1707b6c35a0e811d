#include <gtest/gtest.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "golden.hpp"
#include "pnav/generator.hpp"
#include "pnav/state_text.hpp"

namespace {

namespace fs = std::filesystem;
using namespace pnav;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
    std::istringstream in(slurp(p));
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) {
        if (!l.empty() && l.back() == '\r') l.pop_back();
        out.push_back(l);
    }
    return out;
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        root_ = fs::temp_directory_path() /
                ("pnav_cli_" + std::to_string(::getpid()) + "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(root_);
        fs::create_directories(root_);
        std::ofstream(root_ / "quick.ini") << "[run]\nthreads = 1\n[gd]\nsteps = 2\n"
                                              "[eval]\nepisodes = 3\nepisodes_per_angle = 2\ntiming_images = 10\n";
    }
    void TearDown() override { fs::remove_all(root_); }

    int run(const std::string& args) const {
        const std::string cmd = std::string(PNAV_CLI_PATH) + " " + args + " > " + (root_ / "stdout.txt").string() + " 2>&1";
        const int rc = std::system(cmd.c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    }
    [[nodiscard]] std::string quick(const fs::path& out) const {
        return "--config " + (root_ / "quick.ini").string() + " --out " + out.string();
    }

    fs::path root_;
};

TEST_F(Cli, UsageErrorsExitWithTwo) {
    EXPECT_EQ(run(""), 2);
    EXPECT_EQ(run("--config " + (root_ / "missing.ini").string() + " landscape"), 2);
    EXPECT_NE(slurp(root_ / "stdout.txt").find("missing.ini"), std::string::npos);
    EXPECT_EQ(run(quick(root_ / "o") + " render az=3x"), 2);
    EXPECT_EQ(run(quick(root_ / "o") + " landscape --el-steps 4"), 2);
    EXPECT_EQ(run(quick(root_ / "o") + " eval gd --suite nonsense"), 2);
    EXPECT_EQ(run(quick(root_ / "o") + " eval dagger"), 2);  // no model
    std::ofstream(root_ / "bad.ini") << "[gd]\nstep = 3\n";
    EXPECT_EQ(run("--config " + (root_ / "bad.ini").string() + " landscape"), 2);
    EXPECT_NE(slurp(root_ / "stdout.txt").find("bad.ini:2:"), std::string::npos);
}

TEST_F(Cli, RenderWritesTargetAndFrames) {
    const fs::path out = root_ / "r";
    ASSERT_EQ(run(quick(out) + " render az=40,el=5 --steps 3"), 0);
    EXPECT_TRUE(fs::exists(out / "target.ppm"));
    for (int i = 0; i <= 3; ++i) EXPECT_TRUE(fs::exists(out / ("frame_00" + std::to_string(i) + ".ppm"))) << i;
    EXPECT_FALSE(fs::exists(out / "frame_004.ppm"));
    EXPECT_TRUE(fs::exists(out / "manifest.json"));
    const std::string target = slurp(out / "target.ppm");
    EXPECT_EQ(target, encode_ppm(render(make_generator("car"), parse_state("az=40,el=5"))));
}

TEST_F(Cli, LandscapeRowCount) {
    const fs::path out = root_ / "l";
    ASSERT_EQ(run(quick(out) + " landscape --az-steps 8 --el-steps 3 --el-span 20"), 0);
    const auto rows = lines(out / "landscape.csv");
    ASSERT_EQ(rows.size(), 1u + 8 * 3);
    EXPECT_EQ(rows[0], "azimuth,elevation,loss");
}

TEST_F(Cli, SweepHasEighteenBinsPerThreshold) {
    const fs::path out = root_ / "s";
    ASSERT_EQ(run(quick(out) + " eval gd --suite sweep"), 0);
    const auto rows = lines(out / "report_sweep.csv");
    ASSERT_EQ(rows.size(), 1u + 18 * 3);
    int at30 = 0;
    for (const auto& r : rows) at30 += r.find(",rotation_ap@30,") != std::string::npos;
    EXPECT_EQ(at30, 18);
}

TEST_F(Cli, TimingCoversGdVariants) {
    const fs::path out = root_ / "t";
    ASSERT_EQ(run(quick(out) + " eval gd --suite timing"), 0);
    const std::string report = slurp(out / "report_timing.csv");
    for (const char* p : {"\r\ngd,timing,", "\r\ngd16,timing,", "\r\ngd32,timing,"})
        EXPECT_NE(report.find(p), std::string::npos) << p;
}

TEST_F(Cli, RerunsAreByteIdentical) {
    for (const char* d : {"a", "b"}) ASSERT_EQ(run(quick(root_ / d) + " --seed 3 eval gd"), 0);
    const std::string a = slurp(root_ / "a/report_clean.csv");
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, slurp(root_ / "b/report_clean.csv"));
}

TEST_F(Cli, PpmMatchesGoldenChecksums) {
    int checked = 0;
    for (const auto& e : golden::load(golden::path())) {
        if (e.version != kRendererVersion) continue;
        const fs::path cfg = root_ / (e.category + ".ini");
        std::ofstream(cfg) << "[run]\ncategory = " << e.category << "\n";
        const fs::path out = root_ / ("g" + std::to_string(checked++));
        ASSERT_EQ(run("--config " + cfg.string() + " --out " + out.string() + " render " + e.state + " --steps 0"), 0);
        EXPECT_EQ(golden::hex(golden::fnv1a64(slurp(out / "target.ppm"))), e.checksum) << e.category << " " << e.state;
    }
    EXPECT_EQ(checked, 9);
}

}  // namespace
