#include "bnrm/io.hpp"
#include "bnrm/pricing.hpp"
#include "support/oracles.hpp"

#include "json.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;
using namespace bnrm;

namespace {

struct Cmd {
    int status = -1;
    std::string out;
};

Cmd run_cli(const std::string& args) {
    const std::string cmd = std::string(BNRM_CLI_PATH) + " " + args + " 2>/dev/null";
    Cmd r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    std::size_t n;
    while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
    const int st = pclose(p);
    r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    return r;
}

fs::path scratch(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("bnrm_cli_" + std::to_string(getpid())) / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string config(const std::string& name) { return std::string(BNRM_CONFIG_DIR) + "/" + name; }

std::vector<std::vector<std::string>> csv(const fs::path& p) { return parse_csv(read_file(p.string())); }

std::string column(const std::vector<std::vector<std::string>>& t, const std::string& name, std::size_t row = 1) {
    for (std::size_t j = 0; j < t[0].size(); ++j)
        if (t[0][j] == name) return t[row][j];
    return "<missing>";
}

double num(const std::string& s) { return std::strtod(s.c_str(), nullptr); }

}  // namespace

TEST(Cli, PriceReferenceZcb) {
    const auto dir = scratch("price");
    const auto r = run_cli("price --config " + config("price_zcb.ini") + " --out " + dir.string());
    ASSERT_EQ(r.status, 0) << r.out;
    const auto t = csv(dir / "price.csv");
    ASSERT_EQ(t.size(), 2u);
    EXPECT_EQ(t[0], (std::vector<std::string>{"claim_id", "bn_price", "se", "closed_form", "rn_price", "gap", "n_paths", "seed"}));
    const double price = num(column(t, "bn_price")), se = num(column(t, "se"));
    EXPECT_LT(std::abs(price - 0.51228), 3.0 * se) << price;
    EXPECT_NEAR(num(column(t, "closed_form")), oracle::besq4_zcb(1.0, oracle::clock(0.05, 0.2, 0.0, 30.0)), 1e-12);
    EXPECT_EQ(column(t, "rn_price"), "1");
    EXPECT_EQ(column(t, "n_paths"), "100000");

    const auto m = nlohmann::json::parse(read_file((dir / "manifest.json").string()));
    EXPECT_EQ(m["experiment"], "price");
    EXPECT_EQ(m["seed"], 20240601);
    EXPECT_EQ(m["params_hash"], hex64(params_hash(ModelParams::reference())));
    EXPECT_TRUE(m["versions"].contains("eigen"));
    EXPECT_EQ(m["outputs"][0]["file"], "price.csv");
    EXPECT_EQ(m["outputs"][0]["fnv1a"], hex64(fnv1a(read_file((dir / "price.csv").string()))));
}

TEST(Cli, MissingSeedIsAMachineReadableError) {
    const auto dir = scratch("noseed");
    std::string text = read_file(config("price_zcb.ini"));
    text.erase(text.find("seed = "), text.find('\n', text.find("seed = ")) - text.find("seed = ") + 1);
    const auto ini = dir / "noseed.ini";
    std::ofstream(ini) << text;
    const auto r = run_cli("run --config " + ini.string() + " --out " + (dir / "out").string());
    EXPECT_EQ(r.status, 2);
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["status"], "invalid_config");
    ASSERT_EQ(j["errors"].size(), 1u);
    EXPECT_EQ(j["errors"][0]["field"], "run.seed");
    EXPECT_TRUE(fs::exists(dir / "out" / "errors.json"));
    EXPECT_FALSE(fs::exists(dir / "out" / "price.csv"));
}

TEST(Cli, SubcommandMustMatchConfig) {
    const auto r = run_cli("hedge --config " + config("price_zcb.ini") + " --out " + scratch("mismatch").string());
    EXPECT_EQ(r.status, 2);
    EXPECT_NE(r.out.find("run.experiment"), std::string::npos);
}

TEST(Cli, RuntimeFailureReportsKind) {
    const auto dir = scratch("bad_hedge");
    std::string text = read_file(config("hedge_zcb.ini"));
    text.replace(text.find("rebalance_every = 1 5 25"), 24, "rebalance_every = 7");
    const auto ini = dir / "bad.ini";
    std::ofstream(ini) << text;
    const auto r = run_cli("run --config " + ini.string() + " --out " + (dir / "out").string());
    EXPECT_EQ(r.status, 3);
    EXPECT_EQ(nlohmann::json::parse(r.out)["kind"], "config");
}

TEST(Cli, RefinanceWarningGoesToManifest) {
    const auto dir = scratch("warn");
    std::string text = read_file(config("refinance_cost.ini"));
    text.replace(text.find("k_max = 60"), 10, "k_max = 1");
    text.replace(text.find("n_paths = 20000"), 15, "n_paths = 0");
    const auto ini = dir / "warn.ini";
    std::ofstream(ini) << text;
    const auto r = run_cli("run --config " + ini.string() + " --out " + (dir / "out").string());
    ASSERT_EQ(r.status, 0) << r.out;
    const auto m = nlohmann::json::parse(read_file((dir / "out" / "manifest.json").string()));
    ASSERT_EQ(m["warnings"].size(), 1u);
    const auto t = csv(dir / "out" / "refinance_cost.csv");
    EXPECT_EQ(column(t, "mc_cost"), "");
}

// Every shipped config, rerun and rerun with more workers.
TEST(Cli, CsvBodiesAreByteIdenticalAcrossThreads) {
    std::size_t checked = 0;
    for (const auto& entry : fs::directory_iterator(BNRM_CONFIG_DIR)) {
        if (entry.path().extension() != ".ini") continue;
        const auto name = entry.path().stem().string();
        std::vector<fs::path> dirs;
        for (const char* th : {"1", "1", "3"}) {
            dirs.push_back(scratch(name + "_" + std::to_string(dirs.size())));
            const auto r = run_cli("run --config " + entry.path().string() + " --out " + dirs.back().string() + " --threads " + th);
            ASSERT_EQ(r.status, 0) << name << ": " << r.out;
        }
        const auto m0 = nlohmann::json::parse(read_file((dirs[0] / "manifest.json").string()));
        ASSERT_FALSE(m0["outputs"].empty()) << name;
        for (const auto& f : m0["outputs"]) {
            const std::string file = f["file"];
            const auto ref = read_file((dirs[0] / file).string());
            for (std::size_t k = 1; k < dirs.size(); ++k)
                EXPECT_EQ(read_file((dirs[k] / file).string()), ref) << name << "/" << file << " run " << k;
            ++checked;
        }
        auto strip = [](nlohmann::json m) {
            for (const char* k : {"threads", "started_utc", "elapsed_seconds"}) m.erase(k);
            return m;
        };
        EXPECT_EQ(strip(nlohmann::json::parse(read_file((dirs[2] / "manifest.json").string()))), strip(m0)) << name;
    }
    EXPECT_GE(checked, 15u);
}

TEST(Cli, SimulateDumpMatchesCsv) {
    const auto dir = scratch("sim");
    ASSERT_EQ(run_cli("run --config " + config("simulate_p.ini") + " --out " + dir.string()).status, 0);
    std::ifstream in(dir / "paths.bin", std::ios::binary);
    PathDumpHeader h;
    const auto ps = read_paths_binary(in, &h);
    EXPECT_EQ(h.params_hash, params_hash(ModelParams::reference()));
    const auto t = csv(dir / "paths.csv");
    ASSERT_EQ(t.size(), 1 + ps.n_paths() * ps.n_times());
    const std::size_t i = ps.n_paths() - 1, k = ps.n_times() - 1;
    const auto& row = t[1 + i * ps.n_times() + k];
    EXPECT_EQ(num(row[2]), ps.s_star(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
    EXPECT_EQ(num(row[3]), ps.lambda_density(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)));
    const auto mg = csv(dir / "martingale.csv");
    EXPECT_EQ(mg.size(), 5u);
    for (std::size_t r = 1; r < mg.size(); ++r) EXPECT_LT(num(mg[r][3]), 4.0);
}
