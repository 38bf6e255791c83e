#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "lab/config.hpp"
#include "lab/errors.hpp"
#include "lab/experiments.hpp"
#include "lab/format.hpp"

#ifndef LAB_VERSION
#define LAB_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_numeric = 3;

bool verbose() {
    const char* v = std::getenv("LABCTL_VERBOSE");
    return v && *v && std::string(v) != "0";
}

lab::config_document load_or_empty(const std::string& path) {
    if (path.empty()) return {};
    return lab::config_document::load(path);
}

int cmd_list(bool with_params) {
    for (const auto& e : lab::experiments()) {
        std::cout << e.name << "\t" << e.summary << "\n";
        if (!with_params) continue;
        for (const auto& p : e.params) std::cout << "    " << p.key << " = " << p.default_value << "\t# " << p.help << "\n";
    }
    return exit_ok;
}

int cmd_validate(const std::string& path) {
    auto doc = lab::config_document::load(path);
    auto sections = lab::validate_config(doc);
    std::cout << "ok: " << path;
    if (sections.empty()) std::cout << " (no sections, defaults apply)";
    for (const auto& s : sections) std::cout << " [" << s << "]";
    std::cout << "\n";
    return exit_ok;
}

int cmd_run(const std::string& name, const std::string& config_path, const std::string& out_dir, std::uint64_t seed,
            int reps) {
    const auto* def = lab::find_experiment(name);
    if (!def) throw lab::config_error("unknown experiment '" + name + "' (see `labctl list`)");
    if (reps < 1) throw lab::config_error("--reps must be at least 1");
    auto doc = load_or_empty(config_path);
    lab::validate_config(doc);
    lab::experiment_context ctx;
    ctx.config = lab::resolve_config(*def, doc);
    ctx.seed = seed;
    ctx.index = lab::experiment_index(name);

    const auto start = std::chrono::steady_clock::now();
    const fs::path root(out_dir);
    fs::create_directories(root);
    json outputs = json::array();
    json derived = json::array();
    for (int r = 0; r < reps; ++r) {
        ctx.rep = static_cast<std::uint64_t>(r);
        if (verbose()) std::cerr << "labctl: " << name << " seed " << seed << " repetition " << r << "\n";
        auto result = def->run(ctx);
        fs::path dir = root;
        std::string prefix;
        if (reps > 1) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "rep_%03d", r);
            prefix = std::string(buf) + "/";
            dir /= buf;
            fs::create_directories(dir);
        }
        for (const auto& [file, contents] : result.files) {
            lab::write_file_atomic(dir / file, contents);
            outputs.push_back(prefix + file);
            if (verbose()) std::cerr << "labctl: wrote " << (dir / file).string() << "\n";
        }
        derived.push_back(result.derived);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    json config = json::object();
    for (const auto& [k, v] : ctx.config.entries()) config[k] = v;
    json manifest{{"experiment", name},
                  {"tool", "labctl"},
                  {"tool_version", LAB_VERSION},
                  {"module_versions", {{"labcore", LAB_VERSION}}},
                  {"seed", seed},
                  {"repetitions", reps},
                  {"stream_scheme", "mt19937_64 seeded by seed_seq(seed, (experiment_index << 32) | substream, repetition)"},
                  {"experiment_index", ctx.index},
                  {"config_file", config_path},
                  {"config", config},
                  {"outputs", outputs},
                  {"derived", derived},
                  {"wall_clock_seconds", seconds}};
    lab::write_file_atomic(root / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "wrote " << outputs.size() << " files and manifest.json to " << root.string() << "\n";
    return exit_ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Learning-dynamics laboratory: deterministic experiment runner"};
    app.require_subcommand(1);
    app.set_version_flag("--version", LAB_VERSION);

    bool with_params = false;
    auto* list = app.add_subcommand("list", "List experiments");
    list->add_flag("--params", with_params, "Also print parameters and defaults");

    std::string validate_path;
    auto* validate = app.add_subcommand("validate", "Parse and check a config file");
    validate->add_option("--config", validate_path, "Config file")->required();

    std::string experiment, config_path, out_dir;
    std::uint64_t seed = 0;
    int reps = 1;
    auto* run = app.add_subcommand("run", "Run one experiment");
    run->add_option("experiment", experiment, "Experiment name")->required();
    run->add_option("--config", config_path, "Config file (defaults apply when omitted)");
    run->add_option("--out", out_dir, "Output directory (default: ./<experiment>)");
    run->add_option("--seed", seed, "Master seed")->required();
    run->add_option("--reps", reps, "Repetitions");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_config;
    }

    try {
        if (*list) return cmd_list(with_params);
        if (*validate) return cmd_validate(validate_path);
        if (out_dir.empty()) out_dir = experiment;
        return cmd_run(experiment, config_path, out_dir, seed, reps);
    } catch (const lab::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return exit_config;
    } catch (const lab::lab_error& e) {
        std::cerr << "numerical error: " << e.kind() << ": " << e.what() << "\n";
        return exit_numeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
