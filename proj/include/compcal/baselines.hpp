#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "compcal/data.hpp"
#include "compcal/matrix.hpp"
#include "compcal/metrics.hpp"
#include "compcal/model.hpp"
#include "compcal/pipeline.hpp"

namespace compcal::baselines {

// (1 - alpha) * onehot + alpha / C, elementwise.
std::vector<double> smooth_targets(std::span<const double> onehot, double alpha);

// Cross-entropy training against smoothed one-hot targets; alpha = 0
// reproduces train_standard exactly.
void train_label_smoothing(model::LayeredClassifier& m, const data::Dataset& train, double alpha,
                           const pipeline::TrainConfig& cfg);

struct MCSpec {
    std::size_t passes = 10;
    double dropout_rate = 0.1;
    std::uint64_t seed = 1;
};

// Arithmetic mean of `passes` train-mode (dropout active) forward
// distributions; deterministic given the seed.
Matrix mc_dropout_predict(const model::LayeredClassifier& m, const Matrix& x, const MCSpec& spec);

struct TemperatureSpec {
    double temperature = 1.0;
    double grid_lo = 0.25;
    double grid_hi = 4.0;
    std::size_t grid_points = 50;
};

// Grid search (log-spaced over [grid_lo, grid_hi]) for the T minimizing the
// mean KL(opinion || softmax(logits / T)) over validation samples. Requires
// opinion distributions — this baseline consumes distribution-labeled data.
TemperatureSpec fit_temperature(const Matrix& val_logits, const data::Dataset& val,
                                double grid_lo = 0.25, double grid_hi = 4.0,
                                std::size_t grid_points = 50);

// softmax(logits / T), row-wise.
Matrix apply_temperature(const Matrix& logits, double temperature);

// Soft-target cross-entropy training against each sample's opinion_dist.
// Requires distribution-labeled training data.
void train_ldl(model::LayeredClassifier& m, const data::Dataset& train,
               const pipeline::TrainConfig& cfg);

// The chance predictor: a uniform distribution for every sample. Its accuracy
// is the frequency of the most common majority label over the test set.
metrics::EvalReport chance_eval(const data::Dataset& test);

}  // namespace compcal::baselines
