#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    static fs::path root() { return fs::temp_directory_path() / "pisco_test_cli"; }

    static void SetUpTestSuite() {
        fs::remove_all(root());
        fs::create_directories(root());
    }

    /// Writes `config` and runs `pisco <command> --config <file> --quiet <extra>`; returns the exit code.
    static int run(const std::string& command, const json& config, const std::string& extra = "",
                   std::string* err = nullptr) {
        static int counter = 0;
        const fs::path cfg = root() / ("config_" + std::to_string(counter++) + ".json");
        std::ofstream(cfg) << config.dump(2);
        const fs::path err_file = root() / "stderr.txt";
        const std::string cmd = std::string(PISCO_CLI) + " " + command + " --config " + cfg.string() + " --quiet " +
                                extra + " > /dev/null 2> " + err_file.string();
        const int status = std::system(cmd.c_str());
        if (err) *err = slurp(err_file);
        return WEXITSTATUS(status);
    }

    static json with_out(json cfg, const std::string& dir) {
        cfg["output_dir"] = (root() / dir).string();
        return cfg;
    }

    /// Runs the command twice into separate directories and compares every CSV.
    static void expect_deterministic(const std::string& command, const json& cfg, const std::string& name) {
        ASSERT_EQ(run(command, with_out(cfg, name + "_a")), 0);
        ASSERT_EQ(run(command, with_out(cfg, name + "_b")), 0);
        int csvs = 0;
        for (const auto& e : fs::recursive_directory_iterator(root() / (name + "_a"))) {
            if (e.path().extension() != ".csv") continue;
            ++csvs;
            const auto rel = fs::relative(e.path(), root() / (name + "_a"));
            EXPECT_EQ(slurp(e.path()), slurp(root() / (name + "_b") / rel)) << rel;
        }
        EXPECT_GT(csvs, 0);
    }

    static json tiny_train() {
        return {{"seed", 3},
                {"phantom", {{"n", 16}, {"n_coils", 2}, {"frames", 3}}},
                {"trajectory", {{"spokes_per_frame", 4}}},
                {"pisco", {{"n_s_min", 2}, {"exclusion_radius_in_fe_units", 2}, {"kernel", {{"delta_in_fe_units", 1}}}}},
                {"train",
                 {{"epochs", 20},
                  {"e_pre", 10},
                  {"lambda", 0.1},
                  {"dc_epsilon_over_median", 100},
                  {"architecture", {{"n_features", 8}, {"hidden", 16}, {"layers", 3}}}}}};
    }
};

}  // namespace

TEST_F(Cli, PhantomWritesContainerAndTwentyFiveFrames) {
    const json cfg{{"phantom", {{"n", 16}, {"n_coils", 2}}}};
    ASSERT_EQ(run("phantom", with_out(cfg, "phantom/nested/dir")), 0);
    const fs::path out = root() / "phantom/nested/dir";
    EXPECT_TRUE(fs::exists(out / "kspace.kspc"));
    EXPECT_TRUE(fs::exists(out / "manifest.json"));
    int pngs = 0;
    for (const auto& e : fs::directory_iterator(out / "frames")) pngs += e.path().extension() == ".png";
    EXPECT_EQ(pngs, 25);
}

TEST_F(Cli, ManifestContents) {
    const json cfg{{"phantom", {{"n", 16}, {"n_coils", 2}, {"frames", 2}}}};
    ASSERT_EQ(run("phantom", with_out(cfg, "manifest"), "--seed 42"), 0);
    const json m = json::parse(slurp(root() / "manifest/manifest.json"));
    EXPECT_EQ(m.at("command"), "phantom");
    EXPECT_EQ(m.at("seed"), 42);
    EXPECT_EQ(m.at("config_hash").get<std::string>().size(), 16u);
    EXPECT_TRUE(m.at("versions").contains("eigen"));
    EXPECT_GE(m.at("wall_time_s").get<double>(), 0.0);
    EXPECT_FALSE(m.at("outputs").empty());
}

TEST_F(Cli, UnknownKeyIsNamed) {
    std::string err;
    const json cfg{{"phantom", {{"n", 16}, {"n_coilz", 2}}}};
    EXPECT_EQ(run("phantom", with_out(cfg, "bad"), "", &err), 2);
    EXPECT_NE(err.find("phantom.n_coilz"), std::string::npos) << err;
    EXPECT_EQ(std::count(err.begin(), err.end(), '\n'), 1) << err;
    const json line = json::parse(err);
    EXPECT_EQ(line.at("exit_code"), 2);
    EXPECT_FALSE(fs::exists(root() / "bad"));
}

TEST_F(Cli, WrongTypeIsConfigError) {
    std::string err;
    EXPECT_EQ(run("fit", with_out({{"fit", {{"epochs", "many"}}}}, "badtype"), "", &err), 2);
    EXPECT_NE(err.find("fit.epochs"), std::string::npos) << err;
}

TEST_F(Cli, SingleSubsetDispersionIsAnError) {
    std::string err;
    EXPECT_EQ(run("validate-kernel", with_out({{"validate", {{"n_subsets", 1}}}}, "ns1"), "", &err), 2);
    EXPECT_NE(err.find("validate.n_subsets"), std::string::npos) << err;
}

TEST_F(Cli, DivergenceExitCode) {
    std::string err;
    const json cfg{{"phantom", {{"n", 32}, {"n_coils", 2}}},
                   {"fit",
                    {{"epochs", 3},
                     {"precondition_epochs", 0},
                     {"lambda", 1e10},
                     {"learning_rate", 1e308},
                     {"optimizer", "gradient-descent"}}}};
    EXPECT_EQ(run("fit", with_out(cfg, "diverge"), "", &err), 3);
    EXPECT_NE(err.find("diverged"), std::string::npos) << err;
}

TEST_F(Cli, InsufficientDataExitCode) {
    fs::create_directories(root() / "empty");
    const json cfg{{"metrics", {{"recon_dir", (root() / "empty").string()}, {"reference_dir", (root() / "empty").string()}}}};
    EXPECT_EQ(run("metrics", with_out(cfg, "insufficient")), 4);
}

TEST_F(Cli, UsageErrors) {
    const std::string cmd = std::string(PISCO_CLI) + " > /dev/null 2>&1";
    EXPECT_EQ(WEXITSTATUS(std::system(cmd.c_str())), 2);
    const std::string missing = std::string(PISCO_CLI) + " fit --config /nonexistent.json > /dev/null 2>&1";
    EXPECT_EQ(WEXITSTATUS(std::system(missing.c_str())), 2);
}

TEST_F(Cli, PhantomDeterministic) {
    expect_deterministic("phantom", {{"phantom", {{"n", 16}, {"n_coils", 2}, {"frames", 3}}}}, "det_phantom");
}

TEST_F(Cli, ValidateKernelDeterministic) {
    const json cfg{{"phantom", {{"n", 32}, {"n_coils", 2}}}, {"scale", "natural"}, {"validate", {{"n_subsets", 4}}}};
    expect_deterministic("validate-kernel", cfg, "det_validate");
    const auto csv = slurp(root() / "det_validate_a/dispersion.csv");
    EXPECT_NE(csv.find("radial-equidistant,random,4,"), std::string::npos) << csv;
}

TEST_F(Cli, NoiseSweepDeterministic) {
    const json cfg{{"phantom", {{"n", 32}, {"n_coils", 2}}},
                   {"pisco", {{"n_s_min", 3}}},
                   {"sweep", {{"sigmas_over_median", {0.0, 0.05, 0.1}}, {"seeds", {1}}}}};
    expect_deterministic("noise-sweep", cfg, "det_sweep");
    const auto csv = slurp(root() / "det_sweep_a/sweep.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "sigma,seed,raw_loss,normalized_loss,measure,domain");
    EXPECT_TRUE(fs::exists(root() / "det_sweep_a/sweep.png"));
}

TEST_F(Cli, FitDeterministic) {
    const json cfg{{"phantom", {{"n", 32}, {"n_coils", 2}}},
                   {"pisco", {{"n_s_min", 4}}},
                   {"fit", {{"epochs", 20}, {"precondition_epochs", 5}}}};
    expect_deterministic("fit", cfg, "det_fit");
    for (const char* f : {"loss.csv", "report.csv", "fitted.kspc", "recon_fit.png", "difference_fit.png"})
        EXPECT_TRUE(fs::exists(root() / "det_fit_a" / f)) << f;
}

TEST_F(Cli, TrainReconMetricsChain) {
    expect_deterministic("train", tiny_train(), "det_train");
    ASSERT_EQ(run("phantom", with_out(tiny_train(), "chain_phantom")), 0);
    json recon = tiny_train();
    recon["recon"] = {{"checkpoint", (root() / "det_train_a/model.nikc").string()}};
    expect_deterministic("recon", recon, "det_recon");
    EXPECT_TRUE(fs::exists(root() / "det_recon_a/profile_xt.png"));
    EXPECT_TRUE(fs::exists(root() / "det_recon_a/frames/frame_002.png"));

    const json metrics{{"metrics",
                        {{"recon_dir", (root() / "det_recon_a").string()},
                         {"reference_dir", (root() / "chain_phantom").string()},
                         {"method", "nik+pisco"},
                         {"acceleration", 6}}}};
    expect_deterministic("metrics", metrics, "det_metrics");
    const auto csv = slurp(root() / "det_metrics_a/metrics.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "method,R,frame,psnr,ssim");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}

TEST_F(Cli, ReconAtUnseenTime) {
    ASSERT_EQ(run("train", with_out(tiny_train(), "t037_train")), 0);
    json recon = tiny_train();
    recon["recon"] = {{"checkpoint", (root() / "t037_train/model.nikc").string()}, {"times", {0.37}}};
    ASSERT_EQ(run("recon", with_out(recon, "t037")), 0);
    EXPECT_TRUE(fs::exists(root() / "t037/frames/frame_000.kspc"));
    EXPECT_NE(slurp(root() / "t037/frame_times.csv").find("0,0.37"), std::string::npos);
}

TEST_F(Cli, MetricsOnIdenticalDirsHitCap) {
    ASSERT_EQ(run("phantom", with_out({{"phantom", {{"n", 16}, {"n_coils", 1}, {"frames", 3}}}}, "ident")), 0);
    const auto dir = (root() / "ident").string();
    ASSERT_EQ(run("metrics", with_out({{"metrics", {{"recon_dir", dir}, {"reference_dir", dir}}}}, "ident_m")), 0);
    std::istringstream csv(slurp(root() / "ident_m/metrics.csv"));
    std::string line;
    std::getline(csv, line);
    int rows = 0;
    while (std::getline(csv, line)) {
        ++rows;
        const auto a = line.find(',', line.find(',', line.find(',') + 1) + 1);
        EXPECT_EQ(line.substr(a + 1, line.find(',', a + 1) - a - 1), "100") << line;
    }
    EXPECT_EQ(rows, 3);
}
