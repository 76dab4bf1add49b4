#include "emflow/experiment.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
namespace ex = emflow::experiment;

namespace {

struct Result {
    int code;
    std::string output;
};

Result run_cli(const std::string& args, const std::string& env = "") {
    const std::string cmd = env + " \"" EMFLOW_CLI_PATH "\" " + args + " 2>&1";
    FILE* p = popen(cmd.c_str(), "r");
    std::string out;
    char buf[4096];
    while (std::size_t k = std::fread(buf, 1, sizeof buf, p)) out.append(buf, k);
    const int status = pclose(p);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        root = fs::temp_directory_path() /
               ("emflow_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root);
        fs::create_directories(root);
    }
    void TearDown() override { fs::remove_all(root); }

    std::string dir(const std::string& name) const { return (root / name).string(); }

    fs::path write_config(const std::string& name, const std::string& text) const {
        const fs::path p = root / name;
        std::ofstream(p) << text;
        return p;
    }

    fs::path root;
};

/// Rows of momentflow.csv as (time, config_index, value).
std::vector<std::tuple<double, int, double>> read_momentflow(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, line);
    std::vector<std::tuple<double, int, double>> rows;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string t, i, c, v;
        std::getline(ls, t, ',');
        std::getline(ls, i, ',');
        std::getline(ls, c, ',');
        std::getline(ls, v, ',');
        rows.emplace_back(std::stod(t), std::stoi(i), std::stod(v));
    }
    return rows;
}

} // namespace

TEST(ConfigGrammar, CommentsBlankLinesAndWhitespace) {
    ex::Config cfg;
    const auto d = ex::parse_text("# header\n\n  N = 12   # trailing\nlambda=classical\n", cfg);
    EXPECT_TRUE(d.empty());
    EXPECT_EQ(cfg.integer("N"), 12);
    EXPECT_EQ(cfg.str("lambda"), "classical");
}

TEST(ConfigGrammar, SyntaxDiagnostics) {
    ex::Config cfg;
    const auto d = ex::parse_text("N = 3\nbogus line\nN = 4\n = 2\n", cfg);
    ASSERT_EQ(d.size(), 3u);
    EXPECT_NE(d[0].message.find("line 2"), std::string::npos);
    EXPECT_NE(d[1].message.find("duplicate key 'N'"), std::string::npos);
    EXPECT_NE(d[2].message.find("empty key"), std::string::npos);
}

TEST(ConfigValidate, DefaultsAreClean) {
    EXPECT_TRUE(ex::validate(ex::Config{}).empty());
}

TEST(ConfigValidate, ListsEveryViolation) {
    ex::Config cfg;
    cfg.set("ell", "101");
    cfg.set("experiment", "wishart");
    cfg.set("M", "50");
    cfg.set("mystery", "1");
    cfg.set("orders", "5");
    const auto d = ex::validate(cfg);
    auto has = [&](const std::string& s) {
        for (const auto& x : d)
            if (x.message.find(s) != std::string::npos) return true;
        return false;
    };
    EXPECT_TRUE(has("unknown key 'mystery'"));
    EXPECT_TRUE(has("cutoff exceeds dimension"));
    EXPECT_TRUE(has("M >= N"));
    EXPECT_TRUE(has("orders must be even"));
    EXPECT_EQ(d.size(), 4u);
}

TEST(ConfigValidate, TypeErrorsAndCap) {
    ex::Config cfg;
    cfg.set("N", "ten");
    cfg.set("tol", "1e-10x");
    EXPECT_EQ(ex::validate(cfg).size(), 2u);

    ex::Config big;
    big.set("experiment", "momentflow");
    big.set("N", "200");
    big.set("n", "4");
    const auto d = ex::validate(big);
    ASSERT_EQ(d.size(), 1u);
    EXPECT_EQ(d[0].kind, emflow::ErrorKind::enumeration_cap);
}

TEST(ConfigValidate, CanonicalFormIgnoresOutputDir) {
    ex::Config a, b;
    b.set("output_dir", "/elsewhere");
    EXPECT_EQ(a.hash(), b.hash());
    b.set("seed", "2");
    EXPECT_NE(a.hash(), b.hash());
}

TEST_F(Cli, TwoStateDecayMatchesClosedForm) {
    const auto cfg = write_config("two.cfg", "N = 2\nn = 1\nflow = frozen\nlambda = -1, 1\ntimes = 0.1, 1, 10\n");
    const auto r = run_cli("momentflow " + cfg.string() + " -o " + dir("out"));
    ASSERT_EQ(r.code, 0) << r.output;
    // c_12 = 1/(N·gap²) = 1/8.
    const auto rows = read_momentflow(root / "out" / "momentflow.csv");
    ASSERT_EQ(rows.size(), 8u);
    for (std::size_t i = 0; i < rows.size(); i += 2) {
        const double t = std::get<0>(rows[i]);
        const double diff = std::get<2>(rows[i]) - std::get<2>(rows[i + 1]);
        EXPECT_NEAR(diff, std::exp(-4 * 0.125 * t), 1e-8) << t;
    }
}

TEST_F(Cli, SameSeedGivesIdenticalBytes) {
    const std::string args =
        " --set N=6 --set n=2 --set flow=additive --set trials=300 --set t_end=0.05 --set dt=0.01 --seed 7 -o ";
    ASSERT_EQ(run_cli("vectorflow" + args + dir("a")).code, 0);
    ASSERT_EQ(run_cli("vectorflow" + args + dir("b") + " --threads 3").code, 0);
    for (const char* f : {"vectorflow.csv", "summary.csv"})
        EXPECT_EQ(slurp(root / "a" / f), slurp(root / "b" / f)) << f;
    ASSERT_EQ(run_cli("vectorflow --set N=6 --set n=2 --set trials=300 --set t_end=0.05 --seed 8 -o " + dir("c")).code, 0);
    EXPECT_NE(slurp(root / "a" / "vectorflow.csv"), slurp(root / "c" / "vectorflow.csv"));
}

TEST_F(Cli, ReplayReproducesArtifacts) {
    ASSERT_EQ(run_cli("normality --set N=40 --set draws=30 --set indices=10 -o " + dir("a")).code, 0);
    const auto manifest = slurp(root / "a" / "manifest.json");
    for (const char* key : {"\"config_hash\"", "\"seed\"", "\"artifacts\"", "\"wall_clock_seconds\"",
                            "\"guard_triggers\"", "\"tainted\"", "\"version\""})
        EXPECT_NE(manifest.find(key), std::string::npos) << key;
    ASSERT_EQ(run_cli("replay " + dir("a") + "/manifest.json -o " + dir("b")).code, 0);
    for (const char* f : {"normality.csv", "pooled.csv", "summary.csv"})
        EXPECT_EQ(slurp(root / "a" / f), slurp(root / "b" / f)) << f;
}

TEST_F(Cli, EnumerationCapExitsWithFour) {
    const auto r = run_cli("momentflow --set N=200 --set n=4 -o " + dir("x"));
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.output.find("exceeds 1000000 states"), std::string::npos) << r.output;
    EXPECT_FALSE(fs::exists(root / "x" / "manifest.json"));
}

TEST_F(Cli, ValidationExitsWithTwo) {
    EXPECT_EQ(run_cli("momentflow --set colour=blue -o " + dir("x")).code, 2);
    EXPECT_EQ(run_cli("fsp --set N=10 --set ell=11 -o " + dir("x")).code, 2);
    const auto cfg = write_config("fsp.cfg", "experiment = dbm\n");
    EXPECT_EQ(run_cli("fsp " + cfg.string()).code, 2);
    EXPECT_FALSE(fs::exists(root / "x"));
}

TEST_F(Cli, NumericFailureExitsWithThree) {
    // Two eigenvalues closer than the guard: the SDE gap check fires.
    const auto r = run_cli("vectorflow --set N=3 --set flow=frozen --set lambda=0,1e-9,1 --set gap_guard=1e-6 "
                           "--set trials=100 -o " +
                           dir("x"));
    EXPECT_EQ(r.code, 3) << r.output;
}

TEST_F(Cli, ValidateSubcommand) {
    const auto clean = run_cli("validate");
    EXPECT_EQ(clean.code, 0);
    EXPECT_NE(clean.output.find("0 diagnostic(s)"), std::string::npos);
    EXPECT_NE(clean.output.find("tol = 1e-10"), std::string::npos);

    const auto bad = run_cli("validate --set ell=500 --set class=covariance --set M=10");
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.output.find("cutoff exceeds dimension"), std::string::npos);
    EXPECT_NE(bad.output.find("M >= N"), std::string::npos);
}

TEST_F(Cli, FlagsOverrideFileAndEnvironmentSetsOutputDir) {
    const auto cfg = write_config("d.cfg", "N = 5\nt_end = 0.02\n");
    const auto r = run_cli("dbm " + cfg.string() + " --set N=7", "EMFLOW_OUTPUT_DIR=" + dir("env"));
    ASSERT_EQ(r.code, 0) << r.output;
    const auto path = slurp(root / "env" / "path.csv");
    EXPECT_NE(path.find(",7,"), std::string::npos);
    EXPECT_EQ(path.find(",8,"), std::string::npos);
}

TEST_F(Cli, GuardTriggersTaintManifest) {
    const auto r = run_cli("momentflow --set N=3 --set flow=frozen --set lambda=0,0.001,1 --set gap_guard=0.01 --set t_end=0.001 "
                           "--set snapshots=1 -o " +
                           dir("g"));
    ASSERT_EQ(r.code, 0) << r.output;
    const auto m = slurp(root / "g" / "manifest.json");
    EXPECT_NE(m.find("\"tainted\": true"), std::string::npos) << m;
}
