#include "compcal/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "compcal/netcore.hpp"
#include "compcal/prob.hpp"

namespace compcal::baselines {

std::vector<double> smooth_targets(std::span<const double> onehot, double alpha) {
    if (alpha < 0.0 || alpha >= 1.0) {
        throw std::invalid_argument("smooth_targets: alpha must lie in [0, 1)");
    }
    validate_simplex(onehot, "smooth_targets: onehot");
    std::vector<double> out(onehot.size());
    const double uniform = alpha / static_cast<double>(onehot.size());
    for (std::size_t i = 0; i < onehot.size(); ++i) out[i] = (1.0 - alpha) * onehot[i] + uniform;
    return out;
}

void train_label_smoothing(model::LayeredClassifier& m, const data::Dataset& train, double alpha,
                           const pipeline::TrainConfig& cfg) {
    if (alpha < 0.0 || alpha >= 1.0) {
        throw std::invalid_argument("train_label_smoothing: alpha must lie in [0, 1)");
    }
    const std::size_t classes = m.num_classes();
    pipeline::fit_classifier(m, train, cfg, [classes, alpha](const data::Sample& s, std::span<double> row) {
        if (s.gold_label >= classes) {
            throw std::invalid_argument("train_label_smoothing: gold_label out of range for sample '" +
                                        s.id + "'");
        }
        const double uniform = alpha / static_cast<double>(classes);
        std::fill(row.begin(), row.end(), uniform);
        row[s.gold_label] += 1.0 - alpha;
    });
}

Matrix mc_dropout_predict(const model::LayeredClassifier& m, const Matrix& x, const MCSpec& spec) {
    if (spec.passes == 0) throw std::invalid_argument("mc_dropout_predict: passes must be >= 1");
    if (spec.dropout_rate < 0.0 || spec.dropout_rate >= 1.0) {
        throw std::invalid_argument("mc_dropout_predict: dropout_rate must lie in [0, 1)");
    }

    Rng rng = Rng::derive(spec.seed, 0x4d43u);  // private MC stream
    model::ForwardOptions opts;
    opts.mode = net::Mode::kTrain;
    opts.dropout_rng = &rng;
    opts.dropout_rate_override = spec.dropout_rate;

    Matrix mean(x.rows(), m.num_classes());
    for (std::size_t pass = 0; pass < spec.passes; ++pass) {
        const Matrix probs = m.forward(x, opts).head_probs;
        for (std::size_t i = 0; i < mean.size(); ++i) mean.storage()[i] += probs.storage()[i];
    }
    const double inv = 1.0 / static_cast<double>(spec.passes);
    for (double& v : mean.storage()) v *= inv;
    return mean;
}

Matrix apply_temperature(const Matrix& logits, double temperature) {
    if (!(temperature > 0.0)) {
        throw std::invalid_argument("apply_temperature: temperature must be > 0");
    }
    Matrix scaled = logits;
    for (double& v : scaled.storage()) v /= temperature;
    return net::softmax_rows(scaled);
}

TemperatureSpec fit_temperature(const Matrix& val_logits, const data::Dataset& val, double grid_lo,
                                double grid_hi, std::size_t grid_points) {
    if (val_logits.rows() != val.size()) {
        throw std::invalid_argument("fit_temperature: " + std::to_string(val_logits.rows()) +
                                    " logit rows for " + std::to_string(val.size()) + " samples");
    }
    if (val.empty()) throw std::invalid_argument("fit_temperature: empty validation set");
    if (!(grid_lo > 0.0) || !(grid_hi > grid_lo) || grid_points < 2) {
        throw std::invalid_argument("fit_temperature: invalid grid");
    }
    for (const data::Sample& s : val) {
        if (!s.opinion_dist) {
            throw std::invalid_argument(
                "fit_temperature: sample '" + s.id +
                "' lacks opinion_dist; temperature scaling requires distribution-labeled validation data");
        }
    }

    double best_t = grid_lo;
    double best_kl = std::numeric_limits<double>::infinity();
    const double log_lo = std::log(grid_lo);
    const double log_step = (std::log(grid_hi) - log_lo) / static_cast<double>(grid_points - 1);
    for (std::size_t g = 0; g < grid_points; ++g) {
        const double t = std::exp(log_lo + log_step * static_cast<double>(g));
        const Matrix probs = apply_temperature(val_logits, t);
        double mean_kl = 0.0;
        for (std::size_t i = 0; i < val.size(); ++i) {
            mean_kl += metrics::kl(*val[i].opinion_dist, probs.row(i));
        }
        mean_kl /= static_cast<double>(val.size());
        if (mean_kl < best_kl) {
            best_kl = mean_kl;
            best_t = t;
        }
    }
    return {best_t, grid_lo, grid_hi, grid_points};
}

void train_ldl(model::LayeredClassifier& m, const data::Dataset& train,
               const pipeline::TrainConfig& cfg) {
    const std::size_t classes = m.num_classes();
    pipeline::fit_classifier(m, train, cfg, [classes](const data::Sample& s, std::span<double> row) {
        if (!s.opinion_dist) {
            throw std::invalid_argument("train_ldl: sample '" + s.id +
                                        "' lacks opinion_dist; label-distribution learning requires "
                                        "distribution-labeled training data");
        }
        if (s.opinion_dist->size() != classes) {
            throw std::invalid_argument("train_ldl: opinion_dist length mismatch for sample '" + s.id +
                                        "'");
        }
        std::copy(s.opinion_dist->begin(), s.opinion_dist->end(), row.begin());
    });
}

metrics::EvalReport chance_eval(const data::Dataset& test) {
    if (test.empty()) throw std::invalid_argument("chance_eval: empty test set");
    std::size_t classes = 0;
    for (const data::Sample& s : test) {
        if (!s.opinion_dist) {
            throw std::invalid_argument("chance_eval: sample '" + s.id + "' lacks opinion_dist");
        }
        if (classes == 0) {
            classes = s.opinion_dist->size();
        } else if (s.opinion_dist->size() != classes) {
            throw std::invalid_argument("chance_eval: inconsistent opinion_dist lengths");
        }
    }

    Matrix uniform(test.size(), classes, 1.0 / static_cast<double>(classes));
    metrics::EvalReport report = metrics::evaluate(uniform, test, 0);

    // Chance accuracy is the frequency of the most common majority label, not
    // the argmax-match rate of the uniform predictor.
    std::vector<std::size_t> counts(classes, 0);
    for (const data::Sample& s : test) ++counts[metrics::majority_label(*s.opinion_dist)];
    report.acc = static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
                 static_cast<double>(test.size());
    report.note = "uniform predictor; accuracy = frequency of the most common majority label";
    return report;
}

}  // namespace compcal::baselines
