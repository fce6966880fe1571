#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "edgerace/csv.hpp"
#include "edgerace/experiments.hpp"
#include "edgerace/parallel.hpp"

namespace {

constexpr int kUsageError = 2;

int run_command(const std::string& config, const std::optional<std::string>& out, const std::optional<std::uint64_t>& seed,
                const std::optional<std::string>& backend) {
    edgerace::ExperimentSpec spec;
    try {
        spec = edgerace::load_spec(config);
        if (seed) spec.seed = *seed;
        if (backend) spec.backend = edgerace::parse_backend(*backend);
        if (out) spec.output = *out;
    } catch (const edgerace::SpecError& e) {
        std::cerr << "edgerace: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::invalid_argument& e) {
        std::cerr << "edgerace: " << e.what() << "\n";
        return kUsageError;
    }

    edgerace::ExperimentReport report;
    try {
        report = edgerace::run(spec, edgerace::default_threads());
    } catch (const edgerace::SpecError& e) {
        std::cerr << "edgerace: " << e.what() << "\n";
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "edgerace: " << spec.name << " failed: " << e.what() << "\n";
        return 1;
    }
    try {
        edgerace::write_report(report, spec.output);
    } catch (const std::exception& e) {
        std::cerr << "edgerace: " << e.what() << "\n";
        return kUsageError;
    }

    for (const auto& row : report.rows) {
        std::cout << (row.pass ? "PASS " : "FAIL ") << row.metric << " value=" << edgerace::format_number(row.value)
                  << " reference=" << edgerace::format_number(row.reference)
                  << " tolerance=" << edgerace::format_number(row.tolerance) << "\n";
    }
    std::cout << "verdict: " << (report.verdict() ? "pass" : "fail") << " (" << spec.output.string() << ")\n";
    return report.verdict() ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Competing particle systems: seeded experiments with CSV reports"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run the experiment described by a JSON config");
    std::string config;
    std::optional<std::string> out, backend;
    std::optional<std::uint64_t> seed;
    run->add_option("config", config, "Path to the JSON config")->required();
    run->add_option("--out", out, "Output directory (overrides the config)");
    run->add_option("--seed", seed, "Seed (overrides the config)");
    run->add_option("--backend", backend, "Tail backend: exact, br-approx, saddlepoint, mc-importance");

    auto* list = app.add_subcommand("list", "List the experiments and what each one checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kUsageError;
    }

    if (list->parsed()) {
        for (const auto& info : edgerace::experiment_catalog()) std::cout << info.name << "\t" << info.checks << "\n";
        return 0;
    }
    return run_command(config, out, seed, backend);
}
