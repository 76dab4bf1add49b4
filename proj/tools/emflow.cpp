// emflow: command-line experiment runner.
//
//   emflow <experiment> [config-file] [--set key=value ...] [--seed S]
//          [--output-dir DIR] [--time raw|rescaled] [--threads T]
//   emflow validate [config-file] [--set key=value ...]
//   emflow replay <manifest.json> [--output-dir DIR] [--threads T]
//
// Exit codes: 0 ok, 2 validation/contract, 3 numeric or stiffness, 4 state cap.

#include "emflow/experiment.hpp"
#include "emflow/parallel.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using emflow::Error;
using emflow::ErrorKind;
namespace ex = emflow::experiment;

namespace {

struct CommonArgs {
    std::string config_file;
    std::vector<std::string> sets;
    std::string seed;
    std::string output_dir;
    std::string time;
    int threads = 0;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::validation, "cannot read '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// File keys first, then --set pairs, then the dedicated flags.
std::pair<ex::Config, std::vector<ex::Diagnostic>> assemble(const CommonArgs& a, const std::string& experiment) {
    ex::Config cfg;
    std::vector<ex::Diagnostic> diags;
    std::string file_experiment;
    if (!a.config_file.empty()) {
        diags = ex::parse_text(read_file(a.config_file), cfg);
        file_experiment = cfg.str("experiment");
    }
    for (const auto& kv : a.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            diags.push_back({ErrorKind::validation, "--set expects key=value, got '" + kv + "'"});
            continue;
        }
        cfg.set(ex::detail::trim(kv.substr(0, eq)), ex::detail::trim(kv.substr(eq + 1)));
    }
    if (!a.seed.empty()) cfg.set("seed", a.seed);
    if (!a.output_dir.empty()) cfg.set("output_dir", a.output_dir);
    if (!a.time.empty()) cfg.set("time", a.time);
    if (!experiment.empty()) {
        if (!file_experiment.empty() && file_experiment != experiment)
            diags.push_back({ErrorKind::validation,
                             "config file names experiment '" + file_experiment + "' but the subcommand is '" + experiment + "'"});
        cfg.set("experiment", experiment);
    }
    return {cfg, diags};
}

fs::path output_dir_of(const ex::Config& cfg) {
    if (!cfg.str("output_dir").empty()) return cfg.str("output_dir");
    if (const char* env = std::getenv("EMFLOW_OUTPUT_DIR"); env && *env) return env;
    return "emflow_out";
}

int execute(const ex::Config& cfg, int threads) {
    const auto start = std::chrono::steady_clock::now();
    const fs::path dir = output_dir_of(cfg);
    const auto out = ex::run(cfg, threads);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::validation, "cannot create output directory '" + dir.string() + "'");
    nlohmann::ordered_json artifacts = nlohmann::ordered_json::array();
    for (const auto& a : out.artifacts) {
        std::ofstream f(dir / a.name, std::ios::binary);
        f << a.content;
        if (!f) throw Error(ErrorKind::validation, "cannot write '" + (dir / a.name).string() + "'");
        artifacts.push_back({{"name", a.name}, {"bytes", a.content.size()}, {"fnv1a", hex64(ex::Config::fnv1a(a.content))}});
    }
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    for (const auto& [k, v] : cfg.entries())
        if (k != "output_dir") config[k] = v;
    nlohmann::ordered_json m;
    m["software"] = "emflow";
    m["version"] = std::string(ex::version);
    m["experiment"] = cfg.str("experiment");
    m["config_hash"] = hex64(cfg.hash());
    m["seed"] = cfg.integer("seed");
    m["config"] = config;
    m["artifacts"] = artifacts;
    m["wall_clock_seconds"] = wall;
    m["threads"] = threads > 0 ? threads : emflow::default_threads();
    m["guard_triggers"] = out.guard_triggers;
    m["tainted"] = out.guard_triggers > 0;
    std::ofstream mf(dir / "manifest.json", std::ios::binary);
    mf << m.dump(2) << '\n';
    if (!mf) throw Error(ErrorKind::validation, "cannot write manifest");

    for (const auto& [k, v] : out.summary) std::cout << k << ": " << v << '\n';
    if (out.guard_triggers > 0) std::cout << "tainted: gap guard triggered " << out.guard_triggers << " times\n";
    std::cout << "artifacts: " << dir.string() << '\n';
    return 0;
}

void add_common(CLI::App* sub, CommonArgs& a, bool with_file = true) {
    if (with_file) sub->add_option("config", a.config_file, "config file (key = value lines)");
    sub->add_option("-s,--set", a.sets, "override a key: --set key=value")->allow_extra_args(false);
    sub->add_option("--seed", a.seed, "master seed");
    sub->add_option("-o,--output-dir", a.output_dir, "artifact directory (default $EMFLOW_OUTPUT_DIR or ./emflow_out)");
    sub->add_option("--time", a.time, "raw or rescaled time for additive flows");
    sub->add_option("--threads", a.threads, "worker threads (default: available cores)")->check(CLI::NonNegativeNumber);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Eigenvector moment flow experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(ex::version));

    CommonArgs args;
    std::string chosen;
    const std::vector<std::pair<std::string, std::string>> experiments = {
        {"spectrum", "sample spectra: rigidity and isotropic residuals"},
        {"dbm", "matrix Dyson Brownian motion eigenvalue path"},
        {"vectorflow", "eigenvector SDE Monte Carlo against the moment flow"},
        {"momentflow", "integrate the moment flow"},
        {"fsp", "short-range propagation profile"},
        {"que", "QUE statistic over independent draws"},
        {"normality", "eigenvector overlap moments against Gaussian values"},
        {"wishart", "factor Wishart flow and covariance rate balance"},
    };
    for (const auto& [name, help] : experiments) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub, args);
        sub->callback([&chosen, n = name] { chosen = n; });
    }
    auto* val = app.add_subcommand("validate", "echo the resolved config and list every violated constraint");
    add_common(val, args);
    val->callback([&chosen] { chosen = "validate"; });

    std::string manifest_path;
    auto* rep = app.add_subcommand("replay", "re-run the config recorded in a manifest");
    rep->add_option("manifest", manifest_path, "manifest.json")->required();
    rep->add_option("-o,--output-dir", args.output_dir, "artifact directory");
    rep->add_option("--threads", args.threads, "worker threads")->check(CLI::NonNegativeNumber);
    rep->callback([&chosen] { chosen = "replay"; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (chosen == "validate") {
            auto [cfg, diags] = assemble(args, "");
            for (const auto& d : ex::validate(cfg)) diags.push_back(d);
            for (const auto& [k, v] : cfg.entries()) std::cout << k << " = " << v << '\n';
            for (const auto& d : diags) std::cout << "diagnostic: " << d.message << '\n';
            std::cout << diags.size() << " diagnostic(s)\n";
            return diags.empty() ? 0 : 2;
        }
        if (chosen == "replay") {
            nlohmann::json m;
            try {
                m = nlohmann::json::parse(read_file(manifest_path));
            } catch (const nlohmann::json::exception& e) {
                throw Error(ErrorKind::validation, std::string("manifest: ") + e.what());
            }
            if (!m.contains("config") || !m["config"].is_object())
                throw Error(ErrorKind::validation, "manifest: no config object");
            ex::Config cfg;
            for (const auto& [k, v] : m["config"].items()) cfg.set(k, v.get<std::string>());
            if (!args.output_dir.empty()) cfg.set("output_dir", args.output_dir);
            return execute(cfg, args.threads);
        }
        auto [cfg, diags] = assemble(args, chosen);
        for (const auto& d : diags) throw Error(d.kind, d.message);
        return execute(cfg, args.threads);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return emflow::exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
