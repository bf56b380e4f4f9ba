#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fusionfm/experiment.hpp"

int main(int argc, char** argv) {
    using namespace fusionfm;

    CLI::App app{"Train and evaluate fusion heads over frozen embeddings"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::vector<std::string> reports;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Experiment config (JSON)")->required();
        cmd->add_option("--seed", seed, "Override train.seed");
        cmd->add_option("--out", out_dir, "Override output_dir");
    };
    auto* validate = app.add_subcommand("validate", "Check a config and its data files");
    add_common(validate);
    auto* run = app.add_subcommand("run", "Split, train, evaluate and write reports");
    add_common(run);
    auto* synth = app.add_subcommand("synth", "Write a synthetic benchmark to disk");
    add_common(synth);
    auto* compare = app.add_subcommand("compare", "Tabulate and diff metric reports");
    compare->add_option("reports", reports, "Report JSON files")->required();
    compare->add_option("--out", out_dir, "Write the CSV here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    CliOverrides overrides;
    overrides.seed = seed;
    if (out_dir) overrides.out = *out_dir;

    try {
        if (*validate) return cmd_validate(config_path, std::cout, overrides);
        if (*run) return cmd_run(config_path, std::cout, std::cerr, overrides);
        if (*synth) return cmd_synth(config_path, std::cout, std::cerr, overrides);
        if (*compare) {
            std::vector<fs::path> paths(reports.begin(), reports.end());
            std::optional<fs::path> csv;
            if (out_dir) csv = *out_dir;
            return cmd_compare(paths, std::cout, std::cerr, csv);
        }
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitInput;
}
