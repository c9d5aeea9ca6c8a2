#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "compcal/baselines.hpp"
#include "compcal/data.hpp"
#include "compcal/metrics.hpp"
#include "compcal/model.hpp"
#include "compcal/pipeline.hpp"

namespace compcal::cli {

// A problem with the experiment configuration (bad field, missing file,
// inconsistent request). The CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BaselineToggles {
    bool mc = true;
    bool ls = true;
    bool ts = true;
    bool ldl = true;
    bool chance = true;
    bool ls_ours = true;
};

struct ExperimentConfig {
    // Data: either a synthetic spec (default) or three JSONL paths.
    data::SynthSpec synth;
    bool use_synth = true;
    std::string train_path;
    std::string val_path;
    std::string test_path;

    model::ArchConfig arch;        // input_dim/classes follow the data source
    pipeline::TrainConfig train;   // seed is overridden per run seed
    double tau = 0.01;
    std::vector<double> lambda_candidates{0.6, 0.7, 0.8, 0.9};
    double smoothing_alpha = 0.1;  // LS baseline and smoothed-pipeline runs
    BaselineToggles baselines;
    std::vector<std::uint64_t> seeds{1, 2, 3};
    bool parallel_lambda = true;
    std::size_t latency_repeats = 20;
    std::size_t latency_rows = 1;
    bool save_checkpoints = true;
    std::string out_dir;  // not part of the config fingerprint

    void validate() const;
    // Canonical echo of every effective field except out_dir; hashing its
    // serialization fingerprints the experiment independently of where the
    // outputs land.
    nlohmann::json to_json() const;
    std::string config_hash() const;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
};

// The experiment's working data: the three splits, plus distribution-labeled
// copies of train/val for the extra-resource baselines (from the posterior
// oracle in synthetic mode, or from the files when they carry opinion_dist).
struct LoadedBundle {
    data::Dataset train;
    data::Dataset val;
    data::Dataset test;
    std::optional<data::PosteriorOracle> oracle;
    data::Dataset train_with_dists;  // empty when unavailable
    data::Dataset val_with_dists;    // empty when unavailable
};

LoadedBundle prepare_data(const ExperimentConfig& cfg);

// Everything produced for one seed: the pipeline results (models included),
// baseline models, and per-variant test metrics keyed std / pruning / kd /
// all / mc / ls / ts / ldl / chance / ls_ours.
struct SeedRun {
    std::uint64_t seed = 0;
    pipeline::PipelineResult main;
    std::optional<pipeline::PipelineResult> smoothed;   // the LS+Ours run
    std::optional<model::LayeredClassifier> ls_model;   // when ls ran without ls_ours
    std::optional<model::LayeredClassifier> ldl_model;
    std::optional<double> temperature;
    std::map<std::string, metrics::EvalReport> variant_metrics;

    nlohmann::json to_json() const;  // decisions + metrics, no timings
};

SeedRun run_one_seed(const ExperimentConfig& cfg, const LoadedBundle& bundle, std::uint64_t seed);

// Per-variant mean and sample stddev (n-1) over seeds, for each metric field.
nlohmann::json aggregate_runs(const std::vector<SeedRun>& runs);

// Subcommands. All outputs are written atomically; existing outputs are
// refused unless `force`.
void cmd_synth(const ExperimentConfig& cfg, const std::string& out_dir, bool force);
void cmd_run(const ExperimentConfig& cfg, const std::string& out_dir, bool force);
metrics::EvalReport cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path,
                             const std::string& out_path = "");
std::string cmd_report(const std::string& run_dir);
std::string cmd_bench(const std::vector<std::string>& checkpoint_paths, std::size_t latency_rows,
                      std::size_t latency_repeats);

// Writes content to path via a temporary file and rename.
void write_atomic(const std::string& path, const std::string& content);

}  // namespace compcal::cli
