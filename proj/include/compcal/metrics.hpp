#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "compcal/data.hpp"
#include "compcal/matrix.hpp"
#include "compcal/model.hpp"

namespace compcal::metrics {

// Jensen-Shannon *distance*: sqrt((KL2(p||m) + KL2(q||m)) / 2) with
// m = (p+q)/2 and base-2 logarithms, so the value is symmetric and bounded in
// [0, 1]. Zero probabilities are clipped at 1e-12 inside the logs.
double jsd(std::span<const double> p, std::span<const double> q);

// KL(human || model) in nats: sum_c human_c * ln(human_c / max(model_c, eps)).
// The direction is fixed — the first argument is the reference distribution.
double kl(std::span<const double> human, std::span<const double> model);

// Shannon entropy in nats with 0*ln(0) = 0.
double entropy(std::span<const double> p);

// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax_index(std::span<const double> v);

// Majority label of an opinion distribution (argmax, ties to lowest index).
std::size_t majority_label(std::span<const double> opinion_dist);

// Reference label a prediction is scored against: the opinion distribution's
// majority label when present, otherwise the gold label.
std::size_t reference_label(const data::Sample& s);

// Fraction of rows whose argmax equals the sample's reference label.
double accuracy(const Matrix& predictions, const data::Dataset& dataset);

// Mean over incorrectly predicted samples of
// opinion_dist[majority] - prediction[majority]; signed. Requires opinion
// distributions; empty when every prediction is correct.
std::optional<double> diff_incorrect(const Matrix& predictions, const data::Dataset& dataset);

struct LatencyStats {
    double mean_ms = 0.0;
    double stddev_ms = 0.0;  // sample stddev (n-1)
    std::size_t repeats = 0;
};

// Wall-clock per eval-mode forward pass on a fixed random batch of
// `input_rows` rows. Runs a few warm-up passes first and excludes them.
// Single-threaded; meaningful only for same-host comparisons.
LatencyStats latency_probe(const model::LayeredClassifier& m, std::size_t input_rows,
                           std::size_t repeats);

struct EvalReport {
    std::optional<double> jsd;           // absent when the set lacks opinion_dist
    std::optional<double> kl;
    double acc = 0.0;
    std::optional<double> diff;
    double mean_entropy = 0.0;
    std::size_t param_count = 0;
    std::optional<LatencyStats> latency;
    std::string note;  // e.g. why a field is absent

    nlohmann::json to_json() const;
};

// Scores a prediction matrix (rows aligned with the dataset) against the
// dataset: mean JSD and KL versus opinion distributions (when present),
// accuracy versus majority/gold labels, Diff, and mean prediction entropy.
EvalReport evaluate(const Matrix& predictions, const data::Dataset& dataset,
                    std::size_t param_count = 0);

}  // namespace compcal::metrics
