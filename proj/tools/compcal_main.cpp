#include <cstddef>
#include <cstdint>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "compcal/experiment.hpp"
#include "compcal/version.hpp"

namespace {

compcal::cli::ExperimentConfig load_config(const std::string& path,
                                           const std::vector<std::uint64_t>& seed_override,
                                           const std::string& out_override) {
    using compcal::cli::ExperimentConfig;
    ExperimentConfig cfg = path.empty() ? ExperimentConfig{} : ExperimentConfig::load(path);
    if (!seed_override.empty()) cfg.seeds = seed_override;
    if (!out_override.empty()) cfg.out_dir = out_override;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"compcal: layer pruning + distillation for distribution-calibrated classifiers"};
    app.set_version_flag("--version", compcal::kVersion);
    app.require_subcommand(1);

    std::string config_path;
    std::string out;
    std::vector<std::uint64_t> seeds;
    bool force = false;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON experiment config (defaults apply if omitted)")
            ->envname("COMPCAL_CONFIG");
        sub->add_option("--out", out, "output directory (overrides the config's out_dir)")
            ->envname("COMPCAL_OUT");
        sub->add_option("--seed", seeds, "override the config's seed list")->envname("COMPCAL_SEED");
        sub->add_flag("--force", force, "overwrite existing outputs")->envname("COMPCAL_FORCE");
    };

    CLI::App* synth = app.add_subcommand("synth", "Generate the synthetic JSONL splits");
    add_common(synth);

    CLI::App* run = app.add_subcommand(
        "run", "Train, prune, distill, and evaluate; writes metrics.json, manifest.json, report.md");
    add_common(run);

    CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a JSONL dataset");
    std::string ckpt_path;
    std::string data_path;
    std::string eval_out;
    eval->add_option("--checkpoint", ckpt_path, "model checkpoint")
        ->required()
        ->envname("COMPCAL_CHECKPOINT");
    eval->add_option("--data", data_path, "JSONL dataset")->required()->envname("COMPCAL_DATA");
    eval->add_option("--out", eval_out, "write the JSON report to this file instead of stdout");

    CLI::App* report = app.add_subcommand("report", "Re-render report.md from a finished run directory");
    std::string report_dir;
    report->add_option("--dir", report_dir, "run directory containing metrics.json")
        ->required()
        ->envname("COMPCAL_DIR");

    CLI::App* bench = app.add_subcommand("bench", "Compare checkpoints: parameter counts and latency");
    std::vector<std::string> bench_ckpts;
    std::size_t bench_rows = 1;
    std::size_t bench_repeats = 20;
    bench->add_option("checkpoints", bench_ckpts, "checkpoints to compare")->required();
    bench->add_option("--rows", bench_rows, "input rows per timed forward pass");
    bench->add_option("--repeats", bench_repeats, "timed repetitions (at least 10)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad usage is a configuration problem
    }

    try {
        if (*synth) {
            const auto cfg = load_config(config_path, seeds, out);
            compcal::cli::cmd_synth(cfg, cfg.out_dir, force);
        } else if (*run) {
            const auto cfg = load_config(config_path, seeds, out);
            compcal::cli::cmd_run(cfg, cfg.out_dir, force);
        } else if (*eval) {
            const auto rep = compcal::cli::cmd_eval(ckpt_path, data_path, eval_out);
            if (eval_out.empty()) std::cout << rep.to_json().dump(2) << "\n";
        } else if (*report) {
            std::cout << compcal::cli::cmd_report(report_dir);
        } else if (*bench) {
            std::cout << compcal::cli::cmd_bench(bench_ckpts, bench_rows, bench_repeats);
        }
    } catch (const compcal::cli::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
