#include "bnrm/runner.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <typeinfo>

namespace {

// Writes the error document to stdout and, when possible, next to the outputs.
void report(const nlohmann::json& j, const std::string& out_dir) {
    std::cout << j.dump(2) << "\n";
    if (out_dir.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (!ec) std::ofstream(std::filesystem::path(out_dir) / "errors.json") << j.dump(2) << "\n";
}

const char* error_kind(const bnrm::Error& e) {
    if (dynamic_cast<const bnrm::NumericalError*>(&e)) return "numerical";
    if (dynamic_cast<const bnrm::ContractError*>(&e)) return "contract";
    if (dynamic_cast<const bnrm::DataError*>(&e)) return "data";
    if (dynamic_cast<const bnrm::PermissibilityError*>(&e)) return "permissibility";
    if (dynamic_cast<const bnrm::DomainError*>(&e)) return "domain";
    if (dynamic_cast<const bnrm::ConfigError*>(&e)) return "config";
    return "error";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Benchmark-neutral pricing, hedging and line-of-business experiments"};
    app.require_subcommand(1);
    std::string config_path, out_dir;
    unsigned threads = 0;
    bool verbose = false, threads_set = false;

    std::vector<std::pair<CLI::App*, std::optional<bnrm::Experiment>>> subs;
    auto add = [&](const std::string& name, std::optional<bnrm::Experiment> e, const std::string& help) {
        auto* s = app.add_subcommand(name, help);
        s->add_option("--config", config_path, "INI experiment config")->required()->check(CLI::ExistingFile);
        s->add_option("--out", out_dir, "output directory (overrides run.output)");
        s->add_option("--threads", threads, "worker cap; 0 = all cores; results do not depend on it")
            ->each([&](const std::string&) { threads_set = true; });
        s->add_flag("--verbose", verbose, "progress on stderr");
        subs.emplace_back(s, e);
    };
    add("run", std::nullopt, "run the experiment named in run.experiment");
    for (const auto& [name, e] : bnrm::experiment_names()) add(name, e, "run the " + name + " experiment");

    CLI11_PARSE(app, argc, argv);

    std::optional<bnrm::Experiment> forced;
    for (const auto& [s, e] : subs)
        if (s->parsed()) forced = e;

    bnrm::ExperimentConfig cfg;
    try {
        cfg = bnrm::parse_config(bnrm::read_file(config_path), forced);
    } catch (const bnrm::ValidationError& e) {
        report(bnrm::issues_json(e.issues()), out_dir);
        return 2;
    } catch (const bnrm::Error& e) {
        report(bnrm::issues_json({{"<file>", e.what()}}), out_dir);
        return 2;
    }

    bnrm::RunOptions ro;
    if (!out_dir.empty()) ro.output_dir = out_dir;
    if (threads_set) ro.threads = threads;
    ro.verbose = verbose;
    try {
        const auto res = bnrm::run(cfg, ro);
        if (verbose)
            for (const auto& f : res.outputs) std::cerr << "  " << (res.output_dir / f).string() << "\n";
    } catch (const bnrm::Error& e) {
        report({{"status", "failed"}, {"kind", error_kind(e)}, {"message", e.what()}},
               out_dir.empty() ? cfg.output_dir : out_dir);
        return 3;
    } catch (const std::exception& e) {
        report({{"status", "failed"}, {"kind", "internal"}, {"message", e.what()}}, out_dir);
        return 4;
    }
    return 0;
}
