#include "compcal/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "compcal/metrics.hpp"
#include "compcal/netcore.hpp"
#include "compcal/prob.hpp"

namespace compcal::pipeline {

namespace {

// Stream ids for rng derivation; fixed so a seed pins every draw in a run.
constexpr std::uint64_t kInitStream = 10;
constexpr std::uint64_t kShuffleStream = 11;
constexpr std::uint64_t kDropoutStream = 12;
constexpr std::uint64_t kProbeInitStream = 13;

Matrix features_matrix(const data::Dataset& ds, std::size_t expected_dim) {
    if (ds.empty()) throw std::invalid_argument("empty dataset");
    Matrix x(ds.size(), expected_dim);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds[i].features.size() != expected_dim) {
            throw std::invalid_argument("sample '" + ds[i].id + "' has " +
                                        std::to_string(ds[i].features.size()) +
                                        " features, model expects " + std::to_string(expected_dim));
        }
        std::copy(ds[i].features.begin(), ds[i].features.end(), x.data() + i * expected_dim);
    }
    return x;
}

void one_hot_row(const data::Sample& s, std::size_t classes, std::span<double> row) {
    if (s.gold_label >= classes) {
        throw std::invalid_argument("sample '" + s.id + "' gold_label " + std::to_string(s.gold_label) +
                                    " out of range for " + std::to_string(classes) + " classes");
    }
    std::fill(row.begin(), row.end(), 0.0);
    row[s.gold_label] = 1.0;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = n; i > 1; --i) {  // Fisher-Yates
        std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
    }
    return idx;
}

// Builds the per-batch target matrix from the batch's samples and its shared
// train-mode forward pass (which distillation reads its teacher from).
using BatchTargetFn = std::function<Matrix(const std::vector<std::size_t>& batch_idx,
                                           const model::ForwardResult& fwd)>;

// The one minibatch loop behind every training stage.
void fit_loop(model::LayeredClassifier& m, const data::Dataset& train, const TrainConfig& cfg,
              bool want_probes, const BatchTargetFn& make_targets,
              const std::function<void(const std::vector<std::size_t>&, const model::ForwardResult&,
                                       const Matrix&, model::Tape&)>& backprop) {
    if (train.empty()) throw std::invalid_argument("fit: empty training set");
    if (cfg.batch_size < 1) throw std::invalid_argument("fit: batch_size must be >= 1");
    if (cfg.epochs == 0) return;

    const Matrix all_x = features_matrix(train, m.input_dim());
    net::AdamWConfig opt_cfg;
    opt_cfg.lr = cfg.lr;
    opt_cfg.weight_decay = cfg.weight_decay;
    net::AdamW opt(m.trainable_params(), opt_cfg);

    Rng shuffle_rng = Rng::derive(cfg.seed, kShuffleStream);
    Rng dropout_rng = Rng::derive(cfg.seed, kDropoutStream);

    const std::size_t n = train.size();
    const std::size_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = cfg.epochs * batches_per_epoch;
    std::size_t step = 0;

    model::ForwardOptions opts;
    opts.mode = net::Mode::kTrain;
    opts.want_probes = want_probes;
    opts.dropout_rng = &dropout_rng;

    model::Tape tape;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const std::vector<std::size_t> order = shuffled_indices(n, shuffle_rng);
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t b = std::min(cfg.batch_size, n - start);
            std::vector<std::size_t> batch_idx(order.begin() + start, order.begin() + start + b);

            Matrix x(b, m.input_dim());
            for (std::size_t r = 0; r < b; ++r) {
                const double* src = all_x.data() + batch_idx[r] * m.input_dim();
                std::copy(src, src + m.input_dim(), x.data() + r * m.input_dim());
            }

            const model::ForwardResult fwd = m.forward(x, opts, &tape);
            const Matrix targets = make_targets(batch_idx, fwd);
            m.zero_grad();
            backprop(batch_idx, fwd, targets, tape);

            const double lr = cfg.lr_decay ? net::linear_decay_lr(cfg.lr, step, total_steps) : cfg.lr;
            opt.step(lr);
            ++step;
        }
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay must be >= 0");
}

model::LayeredClassifier make_initialized_model(const model::ArchConfig& arch, std::uint64_t seed) {
    model::LayeredClassifier m(arch);
    Rng rng = Rng::derive(seed, kInitStream);
    m.init_params(rng);
    return m;
}

void fit_classifier(model::LayeredClassifier& m, const data::Dataset& train, const TrainConfig& cfg,
                    const TargetFn& targets) {
    if (!targets) throw std::invalid_argument("fit_classifier: missing target function");
    const std::size_t classes = m.num_classes();
    fit_loop(
        m, train, cfg, /*want_probes=*/false,
        [&](const std::vector<std::size_t>& batch_idx, const model::ForwardResult&) {
            Matrix t(batch_idx.size(), classes);
            for (std::size_t r = 0; r < batch_idx.size(); ++r) {
                targets(train[batch_idx[r]], t.row(r));
            }
            return t;
        },
        [&](const std::vector<std::size_t>&, const model::ForwardResult& fwd, const Matrix& t,
            model::Tape& tape) {
            m.backward(tape, net::softmax_ce_grad(fwd.head_probs, t));
        });
}

void train_standard(model::LayeredClassifier& m, const data::Dataset& train, const TrainConfig& cfg) {
    const std::size_t classes = m.num_classes();
    fit_classifier(m, train, cfg,
                   [classes](const data::Sample& s, std::span<double> row) { one_hot_row(s, classes, row); });
}

void train_probes(model::LayeredClassifier& m, const data::Dataset& train, const TrainConfig& cfg,
                  bool retrain) {
    const bool has_trained_probe = std::any_of(m.probes().begin(), m.probes().end(),
                                               [](const model::Probe& p) { return p.trained; });
    if (has_trained_probe && !retrain) {
        throw std::runtime_error("train_probes: probes are already trained (pass retrain to replace them)");
    }
    m.remove_probes();
    m.freeze_backbone_and_head();
    if (m.depth() < 2) return;  // nothing below the top layer to probe

    Rng init_rng = Rng::derive(cfg.seed, kProbeInitStream);
    m.attach_probes(init_rng);

    const std::size_t classes = m.num_classes();
    fit_loop(
        m, train, cfg, /*want_probes=*/true,
        [&](const std::vector<std::size_t>& batch_idx, const model::ForwardResult&) {
            Matrix t(batch_idx.size(), classes);
            for (std::size_t r = 0; r < batch_idx.size(); ++r) {
                one_hot_row(train[batch_idx[r]], classes, t.row(r));
            }
            return t;
        },
        [&](const std::vector<std::size_t>&, const model::ForwardResult& fwd, const Matrix& t,
            model::Tape& tape) {
            // Joint loss: the sum of every probe's cross-entropy.
            std::vector<model::ProbeGrad> grads;
            grads.reserve(fwd.probe_probs.size());
            for (std::size_t i = 0; i < fwd.probe_probs.size(); ++i) {
                grads.push_back({i, net::softmax_ce_grad(fwd.probe_probs[i], t)});
            }
            m.backward(tape, Matrix(t.rows(), t.cols()), grads);
        });

    for (model::Probe& p : m.probes()) p.trained = true;
}

double gold_accuracy(const model::LayeredClassifier& m, const data::Dataset& dataset) {
    const Matrix x = features_matrix(dataset, m.input_dim());
    const Matrix probs = m.predict(x);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (metrics::argmax_index(probs.row(i)) == dataset[i].gold_label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

ProbeReport probe_report(const model::LayeredClassifier& m, const data::Dataset& val) {
    for (std::size_t layer = 1; layer + 1 <= m.depth(); ++layer) {
        if (!m.has_probe_at(layer) || !m.probe_at(layer).trained) {
            throw std::runtime_error("probe_report: missing trained probe at layer " +
                                     std::to_string(layer));
        }
    }
    const Matrix x = features_matrix(val, m.input_dim());
    model::ForwardOptions opts;
    opts.want_probes = true;
    const model::ForwardResult fwd = m.forward(x, opts);

    auto score = [&](const Matrix& probs, double& acc_out, double& entropy_out) {
        std::size_t hits = 0;
        double h = 0.0;
        for (std::size_t i = 0; i < val.size(); ++i) {
            if (metrics::argmax_index(probs.row(i)) == val[i].gold_label) ++hits;
            h += metrics::entropy(probs.row(i));
        }
        acc_out = static_cast<double>(hits) / static_cast<double>(val.size());
        entropy_out = h / static_cast<double>(val.size());
    };

    ProbeReport report;
    report.accuracy.resize(m.depth());
    report.mean_entropy.resize(m.depth());
    for (std::size_t i = 0; i < m.probes().size(); ++i) {
        const std::size_t layer = m.probes()[i].attach_after;
        score(fwd.probe_probs[i], report.accuracy[layer - 1], report.mean_entropy[layer - 1]);
    }
    score(fwd.head_probs, report.accuracy[m.depth() - 1], report.mean_entropy[m.depth() - 1]);
    report.original_accuracy = report.accuracy[m.depth() - 1];
    return report;
}

PruneDecision select_target_layer(const ProbeReport& report, double tau) {
    if (report.accuracy.empty()) throw std::invalid_argument("select_target_layer: empty report");
    const double bar = report.original_accuracy - tau;
    for (std::size_t layer = 1; layer <= report.accuracy.size(); ++layer) {
        if (report.accuracy[layer - 1] > bar) return {tau, layer};
    }
    // Nothing cleared the bar (possible when tau <= 0): keep the full depth.
    return {tau, report.accuracy.size()};
}

std::size_t select_source_layer(const ProbeReport& report, std::size_t target_layer) {
    if (target_layer < 2) {
        throw std::invalid_argument("select_source_layer: no layer exists below target " +
                                    std::to_string(target_layer));
    }
    if (target_layer > report.mean_entropy.size()) {
        throw std::invalid_argument("select_source_layer: target " + std::to_string(target_layer) +
                                    " exceeds report depth " + std::to_string(report.mean_entropy.size()));
    }
    std::size_t best = 1;
    double best_drop = report.mean_entropy[0] - report.mean_entropy[1];
    for (std::size_t i = 2; i + 1 <= target_layer; ++i) {
        const double drop = report.mean_entropy[i - 1] - report.mean_entropy[i];
        if (drop > best_drop) {  // strict: ties keep the lowest layer
            best = i;
            best_drop = drop;
        }
    }
    return best;
}

void distill(model::LayeredClassifier& m, std::size_t source, double lambda,
             const data::Dataset& train, const TrainConfig& cfg, const TargetFn& gold_targets) {
    if (!(lambda > 0.5) || lambda > 1.0) {
        throw std::invalid_argument("distill: lambda must lie in (0.5, 1], got " + std::to_string(lambda));
    }
    if (source < 1 || source >= m.depth()) {
        throw std::invalid_argument("distill: source layer " + std::to_string(source) +
                                    " must lie in 1.." + std::to_string(m.depth() == 0 ? 0 : m.depth() - 1));
    }
    if (!m.has_probe_at(source) || !m.probe_at(source).trained) {
        throw std::invalid_argument("distill: no trained probe at source layer " + std::to_string(source));
    }

    // The teacher stays fixed; everything above the source layer trains.
    m.set_probe_trainable(source, false);
    m.freeze_through(source);
    for (std::size_t layer = source + 1; layer <= m.depth(); ++layer) m.set_block_trainable(layer, true);
    m.set_head_trainable(true);

    std::size_t teacher_index = 0;
    for (std::size_t i = 0; i < m.probes().size(); ++i) {
        if (m.probes()[i].attach_after == source) teacher_index = i;
    }

    const std::size_t classes = m.num_classes();
    fit_loop(
        m, train, cfg, /*want_probes=*/true,
        [&](const std::vector<std::size_t>& batch_idx, const model::ForwardResult& fwd) {
            // lambda * y + (1 - lambda) * teacher, the teacher being the
            // frozen source-probe distribution from this batch's forward pass.
            const Matrix& teacher = fwd.probe_probs[teacher_index];
            Matrix t(batch_idx.size(), classes);
            for (std::size_t r = 0; r < batch_idx.size(); ++r) {
                auto row = t.row(r);
                if (gold_targets) {
                    gold_targets(train[batch_idx[r]], row);
                } else {
                    one_hot_row(train[batch_idx[r]], classes, row);
                }
                for (std::size_t c = 0; c < classes; ++c) {
                    row[c] = lambda * row[c] + (1.0 - lambda) * teacher(r, c);
                }
            }
            return t;
        },
        [&](const std::vector<std::size_t>&, const model::ForwardResult& fwd, const Matrix& t,
            model::Tape& tape) {
            m.backward(tape, net::softmax_ce_grad(fwd.head_probs, t));
        });
}

std::optional<double> avg_gt_prob_incorrect(const model::LayeredClassifier& m,
                                            const data::Dataset& val) {
    const Matrix x = features_matrix(val, m.input_dim());
    const Matrix probs = m.predict(x);
    double sum = 0.0;
    std::size_t incorrect = 0;
    for (std::size_t i = 0; i < val.size(); ++i) {
        if (metrics::argmax_index(probs.row(i)) == val[i].gold_label) continue;
        if (val[i].gold_label >= probs.cols()) {
            throw std::invalid_argument("avg_gt_prob_incorrect: gold_label out of range for sample '" +
                                        val[i].id + "'");
        }
        sum += probs(i, val[i].gold_label);
        ++incorrect;
    }
    if (incorrect == 0) return std::nullopt;
    return sum / static_cast<double>(incorrect);
}

std::pair<std::size_t, bool> select_lambda(const std::vector<LambdaTrial>& trials,
                                           double original_accuracy, double tau) {
    if (trials.empty()) throw std::invalid_argument("select_lambda: empty candidate list");
    const double bar = original_accuracy - tau;

    // A candidate with no incorrect predictions has no measured value; rank it
    // below every measured one.
    auto score = [](const LambdaTrial& t) { return t.gt_prob_incorrect.value_or(-1.0); };

    std::size_t best = trials.size();
    for (std::size_t i = 0; i < trials.size(); ++i) {
        if (!(trials[i].val_accuracy > bar)) continue;
        if (best == trials.size() || score(trials[i]) > score(trials[best]) ||
            (score(trials[i]) == score(trials[best]) && trials[i].lambda > trials[best].lambda)) {
            best = i;
        }
    }
    if (best != trials.size()) return {best, false};

    // No survivor: fall back to the best validation accuracy.
    best = 0;
    for (std::size_t i = 1; i < trials.size(); ++i) {
        if (trials[i].val_accuracy > trials[best].val_accuracy ||
            (trials[i].val_accuracy == trials[best].val_accuracy &&
             trials[i].lambda > trials[best].lambda)) {
            best = i;
        }
    }
    return {best, true};
}

TuneResult tune_lambda(const model::LayeredClassifier& snapshot, std::size_t source,
                       const std::vector<double>& candidates, const data::Dataset& train,
                       const data::Dataset& val, double original_accuracy, double tau,
                       const TrainConfig& cfg, bool parallel, const TargetFn& gold_targets) {
    if (candidates.empty()) throw std::invalid_argument("tune_lambda: empty candidate list");
    for (double c : candidates) {
        if (!(c > 0.5) || c > 1.0) {
            throw std::invalid_argument("tune_lambda: candidate " + std::to_string(c) +
                                        " outside (0.5, 1]");
        }
    }

    std::vector<LambdaTrial> trials(candidates.size());
    std::vector<std::unique_ptr<model::LayeredClassifier>> models(candidates.size());
    std::vector<std::exception_ptr> errors(candidates.size());

    auto work = [&](std::size_t i) {
        try {
            auto clone = std::make_unique<model::LayeredClassifier>(snapshot);
            distill(*clone, source, candidates[i], train, cfg, gold_targets);
            trials[i].lambda = candidates[i];
            trials[i].val_accuracy = gold_accuracy(*clone, val);
            trials[i].gt_prob_incorrect = avg_gt_prob_incorrect(*clone, val);
            models[i] = std::move(clone);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };

    if (parallel && candidates.size() > 1) {
        std::vector<std::thread> workers;
        workers.reserve(candidates.size());
        for (std::size_t i = 0; i < candidates.size(); ++i) workers.emplace_back(work, i);
        for (std::thread& t : workers) t.join();
    } else {
        for (std::size_t i = 0; i < candidates.size(); ++i) work(i);
    }
    for (const std::exception_ptr& e : errors) {
        if (e) std::rethrow_exception(e);
    }

    const auto [best, fallback] = select_lambda(trials, original_accuracy, tau);

    TuneResult result{
        KDConfig{candidates, candidates[best], source, fallback, false},
        std::move(trials),
        std::move(*models[best]),
    };
    return result;
}

PipelineResult run_full_pipeline(const data::Dataset& train, const data::Dataset& val,
                                 const model::ArchConfig& arch, const PipelineConfig& cfg) {
    cfg.train.validate();
    arch.validate();
    if (cfg.tau < 0.0) throw std::invalid_argument("run_full_pipeline: tau must be >= 0");
    if (cfg.smoothing_alpha < 0.0 || cfg.smoothing_alpha >= 1.0) {
        throw std::invalid_argument("run_full_pipeline: smoothing_alpha must lie in [0, 1)");
    }

    const std::size_t classes = arch.classes;
    const double alpha = cfg.smoothing_alpha;
    // The y targets used by base training and by the distillation loss's
    // gold term: one-hot, or smoothed when a smoothing run was requested.
    const TargetFn base_targets = [classes, alpha](const data::Sample& s, std::span<double> row) {
        one_hot_row(s, classes, row);
        if (alpha > 0.0) {
            for (double& v : row) v = (1.0 - alpha) * v + alpha / static_cast<double>(classes);
        }
    };

    model::LayeredClassifier std_model = make_initialized_model(arch, cfg.train.seed);
    fit_classifier(std_model, train, cfg.train, base_targets);
    const double original_accuracy = gold_accuracy(std_model, val);

    model::LayeredClassifier probed = std_model;
    train_probes(probed, train, cfg.train);
    const ProbeReport report = probe_report(probed, val);

    const PruneDecision decision = select_target_layer(report, cfg.tau);
    model::LayeredClassifier pruned = probed.prune_above(decision.target_layer);

    auto distill_variant = [&](std::size_t target) -> std::pair<model::LayeredClassifier, TuneResult> {
        const std::size_t source = select_source_layer(report, target);
        model::LayeredClassifier snapshot = probed.prune_above(target);
        snapshot.attach_probe_copy(probed.probe_at(source));
        TuneResult tuned = tune_lambda(snapshot, source, cfg.lambda_candidates, train, val,
                                       original_accuracy, cfg.tau, cfg.train, cfg.parallel_lambda,
                                       base_targets);
        model::LayeredClassifier distilled = std::move(tuned.best_model);
        distilled.remove_probes();
        distilled.unfreeze_all();
        return {std::move(distilled), std::move(tuned)};
    };

    PipelineResult result{std_model, pruned, std_model, pruned, report, decision,
                          KDConfig{}, KDConfig{}, {}, {}, original_accuracy};
    result.kd_full_depth.lambda_candidates = cfg.lambda_candidates;
    result.kd_pruned.lambda_candidates = cfg.lambda_candidates;

    if (arch.blocks >= 2) {
        auto [kd_model, tuned] = distill_variant(probed.depth());
        result.kd_model = std::move(kd_model);
        result.kd_full_depth = tuned.config;
        result.trials_full_depth = std::move(tuned.trials);
    } else {
        result.kd_full_depth.skipped = true;
    }

    if (decision.target_layer >= 2) {
        auto [all_model, tuned] = distill_variant(decision.target_layer);
        result.all_model = std::move(all_model);
        result.kd_pruned = tuned.config;
        result.trials_pruned = std::move(tuned.trials);
    } else {
        // target = 1 leaves no source layer below it: emit the prune-only
        // model and flag distillation as skipped.
        result.kd_pruned.skipped = true;
    }

    return result;
}

}  // namespace compcal::pipeline
