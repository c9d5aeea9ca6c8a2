#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "compcal/data.hpp"
#include "compcal/model.hpp"

namespace compcal::pipeline {

struct TrainConfig {
    double lr = 1e-3;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double weight_decay = 0.1;
    std::uint64_t seed = 1;
    bool lr_decay = true;

    // Enforced where configs enter from the outside; the training loops
    // themselves treat 0 epochs as "do nothing".
    void validate() const;
};

// Per-layer validation profile. Entry ell-1 describes layer ell; the last
// entry is the model's own head, so accuracy.back() == original_accuracy.
struct ProbeReport {
    std::vector<double> accuracy;
    std::vector<double> mean_entropy;
    double original_accuracy = 0.0;
};

struct PruneDecision {
    double tau = 0.01;
    std::size_t target_layer = 0;
};

struct KDConfig {
    std::vector<double> lambda_candidates{0.6, 0.7, 0.8, 0.9};
    double selected_lambda = 0.0;
    std::size_t source_layer = 0;
    bool fallback = false;  // no candidate passed the accuracy bar
    bool skipped = false;   // target == 1 left no room for a source layer
};

// Measured outcome of distilling with one lambda candidate.
struct LambdaTrial {
    double lambda = 0.0;
    double val_accuracy = 0.0;
    std::optional<double> gt_prob_incorrect;
};

// ---------------------------------------------------------------------------
// Training

// Builds the target distribution for one training sample. The soft label a
// sample trains against; one-hot for standard training, smoothed or
// distributional for the baselines.
using TargetFn = std::function<void(const data::Sample&, std::span<double> target_row)>;

// Shared minibatch loop: shuffled epochs, soft-target cross-entropy on the
// head, AdamW with optional linear lr decay. Rng streams (shuffle, dropout)
// derive from cfg.seed, so a fixed seed fixes the whole trajectory.
void fit_classifier(model::LayeredClassifier& m, const data::Dataset& train, const TrainConfig& cfg,
                    const TargetFn& targets);

// Fresh model with He-initialized parameters drawn from the same stream the
// pipeline uses, so separately trained baselines with the same seed start
// from the identical initialization.
model::LayeredClassifier make_initialized_model(const model::ArchConfig& arch, std::uint64_t seed);

// One-hot cross-entropy training of all trainable parameters.
void train_standard(model::LayeredClassifier& m, const data::Dataset& train, const TrainConfig& cfg);

// Freezes the backbone and head, attaches fresh probes after layers
// 1..depth-1, and trains them jointly (loss = sum of per-probe one-hot CE)
// with the same configuration. Throws if trained probes are already attached,
// unless `retrain` (which replaces them).
void train_probes(model::LayeredClassifier& m, const data::Dataset& train, const TrainConfig& cfg,
                  bool retrain = false);

// Eval-mode accuracy of the head against gold labels.
double gold_accuracy(const model::LayeredClassifier& m, const data::Dataset& dataset);

// Per-layer validation accuracy and mean prediction entropy (eval mode), with
// the head as the top entry.
ProbeReport probe_report(const model::LayeredClassifier& m, const data::Dataset& val);

// ---------------------------------------------------------------------------
// Selection rules

// Lowest layer ell with accuracy[ell] > original - tau (strict); the top
// layer is returned when no layer clears the bar.
PruneDecision select_target_layer(const ProbeReport& report, double tau);

// Over i in [1, target-1], the i maximizing mean_entropy[i] - mean_entropy[i+1];
// ties resolve to the lowest i. Requires target >= 2.
std::size_t select_source_layer(const ProbeReport& report, std::size_t target_layer);

// ---------------------------------------------------------------------------
// Distillation

// Minimizes lambda*CE(head, y) + (1-lambda)*CE(head, teacher) where the
// teacher is the frozen source-probe distribution, recomputed per batch from
// the shared forward pass and treated as a constant. Blocks 1..source are
// frozen. Requires a trained probe at `source` and lambda in (0.5, 1]
// (lambda = 1 degenerates to plain CE training of the unfrozen suffix).
// `gold_targets` overrides the y term (e.g. smoothed labels); one-hot when
// absent.
void distill(model::LayeredClassifier& m, std::size_t source, double lambda,
             const data::Dataset& train, const TrainConfig& cfg,
             const TargetFn& gold_targets = nullptr);

// Mean predicted probability of the gold label over misclassified validation
// samples; empty when every prediction is correct.
std::optional<double> avg_gt_prob_incorrect(const model::LayeredClassifier& m,
                                            const data::Dataset& val);

// Pure selection rule over measured candidate trials: candidates with
// val_accuracy > original - tau survive; among survivors the highest
// gt_prob_incorrect wins (a missing value ranks below any measured one), ties
// to the larger lambda. With no survivors the best val_accuracy wins and the
// choice is flagged as a fallback.
std::pair<std::size_t, bool> select_lambda(const std::vector<LambdaTrial>& trials,
                                           double original_accuracy, double tau);

struct TuneResult {
    KDConfig config;
    std::vector<LambdaTrial> trials;
    model::LayeredClassifier best_model;
};

// Distills one clone of `snapshot` per candidate — identical initial state and
// seed schedule for each, so candidates differ only in lambda — then applies
// select_lambda. `parallel` runs candidates on separate threads (results are
// deterministic either way).
TuneResult tune_lambda(const model::LayeredClassifier& snapshot, std::size_t source,
                       const std::vector<double>& candidates, const data::Dataset& train,
                       const data::Dataset& val, double original_accuracy, double tau,
                       const TrainConfig& cfg, bool parallel = false,
                       const TargetFn& gold_targets = nullptr);

// ---------------------------------------------------------------------------
// Full pipeline

struct PipelineConfig {
    TrainConfig train;
    double tau = 0.01;
    std::vector<double> lambda_candidates{0.6, 0.7, 0.8, 0.9};
    // Smoothing applied to the gold targets of base training and of the KD
    // loss's y term (the label-smoothing variant of the method); 0 disables.
    double smoothing_alpha = 0.0;
    bool parallel_lambda = false;
};

struct PipelineResult {
    model::LayeredClassifier std_model;      // base training only
    model::LayeredClassifier pruned_model;   // + pruning
    model::LayeredClassifier kd_model;       // + distillation at full depth
    model::LayeredClassifier all_model;      // + pruning + distillation
    ProbeReport report;
    PruneDecision decision;
    KDConfig kd_full_depth;                  // decisions behind kd_model
    KDConfig kd_pruned;                      // decisions behind all_model
    std::vector<LambdaTrial> trials_full_depth;
    std::vector<LambdaTrial> trials_pruned;
    double original_accuracy = 0.0;
};

// Base training -> probe training -> target selection -> pruning -> source
// selection -> lambda tuning -> distillation, emitting the four ablation
// variants (base, pruning only, distillation only, both).
PipelineResult run_full_pipeline(const data::Dataset& train, const data::Dataset& val,
                                 const model::ArchConfig& arch, const PipelineConfig& cfg);

}  // namespace compcal::pipeline
