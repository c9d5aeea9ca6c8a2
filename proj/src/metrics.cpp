#include "compcal/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include "compcal/prob.hpp"

namespace compcal::metrics {

namespace {

// KL(p || m) with base-2 logs; m entries are clipped inside the log.
double kl2_clipped(std::span<const double> p, std::span<const double> m) {
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        sum += p[i] * std::log2(std::max(p[i], kLogEps) / std::max(m[i], kLogEps));
    }
    return sum;
}

}  // namespace

double jsd(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) {
        throw std::invalid_argument("jsd: length mismatch " + std::to_string(p.size()) + " vs " +
                                    std::to_string(q.size()));
    }
    validate_simplex(p, "jsd: p");
    validate_simplex(q, "jsd: q");
    std::vector<double> m(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
    const double js_div = 0.5 * (kl2_clipped(p, m) + kl2_clipped(q, m));
    // Tiny negatives from rounding would poison the square root.
    return std::sqrt(std::max(js_div, 0.0));
}

double kl(std::span<const double> human, std::span<const double> model) {
    if (human.size() != model.size()) {
        throw std::invalid_argument("kl: length mismatch " + std::to_string(human.size()) + " vs " +
                                    std::to_string(model.size()));
    }
    validate_simplex(human, "kl: human");
    validate_simplex(model, "kl: model");
    double sum = 0.0;
    for (std::size_t i = 0; i < human.size(); ++i) {
        if (human[i] <= 0.0) continue;
        sum += human[i] * std::log(human[i] / std::max(model[i], kLogEps));
    }
    return sum;
}

double entropy(std::span<const double> p) {
    validate_simplex(p, "entropy: p");
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

std::size_t argmax_index(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("argmax_index: empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

std::size_t majority_label(std::span<const double> opinion_dist) {
    validate_simplex(opinion_dist, "majority_label: opinion_dist");
    return argmax_index(opinion_dist);
}

std::size_t reference_label(const data::Sample& s) {
    return s.opinion_dist ? majority_label(*s.opinion_dist) : s.gold_label;
}

double accuracy(const Matrix& predictions, const data::Dataset& dataset) {
    if (predictions.rows() != dataset.size()) {
        throw std::invalid_argument("accuracy: " + std::to_string(predictions.rows()) +
                                    " prediction rows for " + std::to_string(dataset.size()) + " samples");
    }
    if (dataset.empty()) throw std::invalid_argument("accuracy: empty dataset");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (argmax_index(predictions.row(i)) == reference_label(dataset[i])) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

std::optional<double> diff_incorrect(const Matrix& predictions, const data::Dataset& dataset) {
    if (predictions.rows() != dataset.size()) {
        throw std::invalid_argument("diff_incorrect: " + std::to_string(predictions.rows()) +
                                    " prediction rows for " + std::to_string(dataset.size()) + " samples");
    }
    double sum = 0.0;
    std::size_t incorrect = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const data::Sample& s = dataset[i];
        if (!s.opinion_dist) {
            throw std::invalid_argument("diff_incorrect: sample '" + s.id + "' lacks opinion_dist");
        }
        const std::size_t majority = majority_label(*s.opinion_dist);
        if (argmax_index(predictions.row(i)) == majority) continue;
        sum += (*s.opinion_dist)[majority] - predictions(i, majority);
        ++incorrect;
    }
    if (incorrect == 0) return std::nullopt;
    return sum / static_cast<double>(incorrect);
}

LatencyStats latency_probe(const model::LayeredClassifier& m, std::size_t input_rows,
                           std::size_t repeats) {
    if (m.depth() == 0) throw std::invalid_argument("latency_probe: model has no encoder blocks");
    if (input_rows == 0) throw std::invalid_argument("latency_probe: input_rows must be positive");
    if (repeats < 10) throw std::invalid_argument("latency_probe: need at least 10 repeats");

    Rng rng(0x1a7e9c3ULL);
    Matrix x(input_rows, m.input_dim());
    for (double& v : x.storage()) v = rng.normal();

    volatile double sink = 0.0;  // keeps the forward pass observable
    for (int warm = 0; warm < 3; ++warm) sink += m.predict(x)(0, 0);

    std::vector<double> ms(repeats);
    for (std::size_t r = 0; r < repeats; ++r) {
        const auto start = std::chrono::steady_clock::now();
        sink += m.predict(x)(0, 0);
        const auto stop = std::chrono::steady_clock::now();
        ms[r] = std::chrono::duration<double, std::milli>(stop - start).count();
    }
    (void)sink;

    double mean = 0.0;
    for (double v : ms) mean += v;
    mean /= static_cast<double>(repeats);
    double var = 0.0;
    for (double v : ms) var += (v - mean) * (v - mean);
    var /= static_cast<double>(repeats - 1);
    return {mean, std::sqrt(var), repeats};
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    if (jsd) j["jsd"] = *jsd;
    if (kl) j["kl"] = *kl;
    j["acc"] = acc;
    if (diff) j["diff"] = *diff;
    j["mean_entropy"] = mean_entropy;
    j["param_count"] = param_count;
    if (latency) {
        j["latency"] = {{"mean_ms", latency->mean_ms},
                        {"stddev_ms", latency->stddev_ms},
                        {"repeats", latency->repeats}};
    }
    if (!note.empty()) j["note"] = note;
    return j;
}

EvalReport evaluate(const Matrix& predictions, const data::Dataset& dataset, std::size_t param_count) {
    if (predictions.rows() != dataset.size()) {
        throw std::invalid_argument("evaluate: " + std::to_string(predictions.rows()) +
                                    " prediction rows for " + std::to_string(dataset.size()) + " samples");
    }
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");

    EvalReport report;
    report.param_count = param_count;
    report.acc = accuracy(predictions, dataset);

    double entropy_sum = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) entropy_sum += entropy(predictions.row(i));
    report.mean_entropy = entropy_sum / static_cast<double>(dataset.size());

    const bool has_dists =
        std::all_of(dataset.begin(), dataset.end(), [](const data::Sample& s) { return bool(s.opinion_dist); });
    if (has_dists) {
        double jsd_sum = 0.0;
        double kl_sum = 0.0;
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            jsd_sum += jsd(*dataset[i].opinion_dist, predictions.row(i));
            kl_sum += kl(*dataset[i].opinion_dist, predictions.row(i));
        }
        report.jsd = jsd_sum / static_cast<double>(dataset.size());
        report.kl = kl_sum / static_cast<double>(dataset.size());
        report.diff = diff_incorrect(predictions, dataset);
    } else {
        report.note = "distribution metrics omitted: dataset lacks opinion_dist";
    }
    return report;
}

}  // namespace compcal::metrics
