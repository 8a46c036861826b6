// vcrb-lab: end-to-end pattern extraction, classification, explanation,
// backtesting and statistics from a single config file.

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "vcrb/pipeline.hpp"

int main(int argc, char** argv) {
    CLI::App app{"volume-centred range bar research pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
    bool dry_run = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "config file (JSON)")->required();
        cmd->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
            seed_set = true;
        });
        cmd->add_option("--out", out_dir, "override the output directory");
    };

    CLI::App* run = app.add_subcommand("run", "run the full pipeline");
    add_common(run);
    std::vector<CLI::App*> stage_cmds;
    for (const std::string& stage : vcrb::stage_names()) {
        if (stage == "ingest") continue;  // covered by run; stages below re-read its artifacts
        CLI::App* cmd = app.add_subcommand(stage, "run the " + stage + " stage from cached inputs");
        add_common(cmd);
        if (stage == "extract")
            cmd->add_flag("--dry-run", dry_run, "print event counts per range without writing");
        stage_cmds.push_back(cmd);
    }
    CLI::App* ingest = app.add_subcommand("ingest", "ingest or synthesize tick data");
    add_common(ingest);

    CLI11_PARSE(app, argc, argv);

    try {
        vcrb::StageRequest request;
        request.config = vcrb::load_config(config_path);
        if (seed_set) request.seed_override = seed;
        if (!out_dir.empty()) request.out_override = out_dir;
        request.dry_run = dry_run;

        if (app.got_subcommand(run)) {
            vcrb::run_pipeline(std::move(request));
        } else {
            for (CLI::App* cmd : app.get_subcommands())
                vcrb::run_stage(cmd->get_name(), request);
        }
    } catch (const vcrb::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const vcrb::StageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
