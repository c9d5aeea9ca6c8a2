#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include <doctest.h>

#include "compcal/data.hpp"
#include "compcal/metrics.hpp"
#include "compcal/model.hpp"
#include "compcal/netcore.hpp"
#include "compcal/pipeline.hpp"
#include "compcal/rng.hpp"
#include "support/oracles.hpp"

using namespace compcal;
using pipeline::LambdaTrial;
using pipeline::ProbeReport;

namespace {

bool dense_equal(const net::DenseLayer& a, const net::DenseLayer& b) {
    return a.weights == b.weights && a.bias == b.bias;
}

bool models_equal(const model::LayeredClassifier& a, const model::LayeredClassifier& b) {
    if (a.depth() != b.depth() || a.probes().size() != b.probes().size()) return false;
    for (std::size_t i = 0; i < a.depth(); ++i) {
        if (!dense_equal(a.blocks()[i].dense, b.blocks()[i].dense)) return false;
    }
    if (!dense_equal(a.head(), b.head())) return false;
    for (std::size_t i = 0; i < a.probes().size(); ++i) {
        if (a.probes()[i].attach_after != b.probes()[i].attach_after) return false;
        if (!dense_equal(a.probes()[i].head, b.probes()[i].head)) return false;
    }
    return true;
}

model::ArchConfig toy_arch() {
    model::ArchConfig arch;
    arch.input_dim = 2;
    arch.width = 8;
    arch.blocks = 3;
    arch.classes = 3;
    arch.dropout_rate = 0.1;
    return arch;
}

// Three well-separated Gaussian blobs; gold label = generating component.
data::Dataset toy_data(std::size_t n, std::uint64_t seed) {
    const double means[3][2] = {{2.0, 0.0}, {-2.0, 2.0}, {-2.0, -2.0}};
    Rng rng(seed);
    data::Dataset out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % 3;
        data::Sample s;
        s.id = "toy-" + std::to_string(i);
        s.gold_label = c;
        s.features = {means[c][0] + 0.3 * rng.normal(), means[c][1] + 0.3 * rng.normal()};
        out.push_back(std::move(s));
    }
    return out;
}

pipeline::TrainConfig toy_cfg(std::size_t epochs = 4, std::uint64_t seed = 5) {
    pipeline::TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.seed = seed;
    // Adam moves each weight by roughly lr per step; the toy sets give few
    // steps, so a larger rate keeps the tasks learnable in seconds.
    cfg.lr = 1e-2;
    return cfg;
}

ProbeReport make_report(std::vector<double> acc, std::vector<double> entropy) {
    ProbeReport r;
    r.original_accuracy = acc.back();
    r.accuracy = std::move(acc);
    r.mean_entropy = std::move(entropy);
    return r;
}

LambdaTrial trial(double lambda, double acc, std::optional<double> gt) {
    LambdaTrial t;
    t.lambda = lambda;
    t.val_accuracy = acc;
    t.gt_prob_incorrect = gt;
    return t;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("training configs reject nonsensical values") {
    pipeline::TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.lr = 0.0;
    CHECK_THROWS(cfg.validate());
    cfg = pipeline::TrainConfig{};
    cfg.epochs = 0;
    CHECK_THROWS(cfg.validate());
    cfg = pipeline::TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS(cfg.validate());
    cfg = pipeline::TrainConfig{};
    cfg.weight_decay = -0.1;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("the default training configuration matches the benchmark recipe") {
    const pipeline::TrainConfig cfg;
    CHECK(cfg.lr == 1e-3);
    CHECK(cfg.epochs == 30);
    CHECK(cfg.batch_size == 32);
    CHECK(cfg.weight_decay == 0.1);
    CHECK(cfg.lr_decay);
}

TEST_CASE("target selection keeps the lowest layer inside the tolerance") {
    const auto report = make_report({0.60, 0.68, 0.695, 0.705, 0.71}, {1, 1, 1, 1, 1});
    const auto decision = pipeline::select_target_layer(report, 0.01);
    CHECK(decision.target_layer == 4);
    CHECK(decision.tau == 0.01);
}

TEST_CASE("target selection demands a strict margin") {
    // Layer 2 sits exactly on original - tau; strict comparison rejects it.
    const auto report = make_report({0.60, 0.70, 0.705, 0.71}, {1, 1, 1, 1});
    CHECK(pipeline::select_target_layer(report, 0.01).target_layer == 3);
}

TEST_CASE("target selection can keep the first layer or fall back to the top") {
    const auto flat = make_report({0.709, 0.71, 0.71, 0.71}, {1, 1, 1, 1});
    CHECK(pipeline::select_target_layer(flat, 0.01).target_layer == 1);
    // tau = 0 makes the bar the original accuracy itself; only the top layer
    // (compared against itself, strictly) fails, so the rule keeps full depth.
    const auto monotone = make_report({0.5, 0.6, 0.7}, {1, 1, 1});
    CHECK(pipeline::select_target_layer(monotone, 0.0).target_layer == 3);
    CHECK_THROWS(pipeline::select_target_layer(ProbeReport{}, 0.01));
}

TEST_CASE("target selection agrees with an exhaustive scan") {
    Rng rng(17);
    for (int t = 0; t < 300; ++t) {
        const std::size_t depth = 2 + rng.uniform_index(7);
        std::vector<double> acc(depth);
        for (double& a : acc) a = 0.5 + 0.45 * rng.uniform();
        const double tau = 0.05 * rng.uniform();
        auto report = make_report(acc, std::vector<double>(depth, 1.0));
        std::size_t want = depth;
        for (std::size_t layer = 1; layer <= depth; ++layer) {
            if (report.accuracy[layer - 1] > report.original_accuracy - tau) {
                want = layer;
                break;
            }
        }
        CHECK(pipeline::select_target_layer(report, tau).target_layer == want);
    }
}

TEST_CASE("source selection finds the largest consecutive entropy drop") {
    const auto report = make_report({1, 1, 1, 1, 1}, {1.05, 1.01, 0.72, 0.55, 0.50});
    CHECK(pipeline::select_source_layer(report, 4) == 2);
}

TEST_CASE("source selection breaks ties toward the lowest layer") {
    // 0.25 drops are exact in binary, so the tie is a true tie.
    const auto report = make_report({1, 1, 1, 1}, {1.0, 0.75, 0.5, 0.5});
    CHECK(pipeline::select_source_layer(report, 4) == 1);
    const auto two = make_report({1, 1, 1}, {1.0, 0.9, 0.9});
    CHECK(pipeline::select_source_layer(two, 2) == 1);
}

TEST_CASE("source selection requires room below the target") {
    const auto report = make_report({1, 1, 1}, {1.0, 0.9, 0.8});
    CHECK_THROWS(pipeline::select_source_layer(report, 1));
    CHECK_THROWS(pipeline::select_source_layer(report, 0));
    CHECK_THROWS(pipeline::select_source_layer(report, 4));
}

TEST_CASE("source selection agrees with an exhaustive scan") {
    Rng rng(23);
    for (int t = 0; t < 300; ++t) {
        const std::size_t depth = 2 + rng.uniform_index(7);
        std::vector<double> ent(depth);
        for (double& e : ent) e = 0.2 + rng.uniform();
        const std::size_t target = 2 + rng.uniform_index(depth - 1);
        const auto report = make_report(std::vector<double>(depth, 1.0), ent);
        std::size_t want = 1;
        double best = -1e300;
        for (std::size_t i = 1; i + 1 <= target; ++i) {
            const double drop = ent[i - 1] - ent[i];
            if (drop > best) {
                best = drop;
                want = i;
            }
        }
        CHECK(pipeline::select_source_layer(report, target) == want);
    }
}

TEST_CASE("lambda selection keeps the most hedged survivor") {
    const std::vector<LambdaTrial> trials{
        trial(0.6, 0.69, 0.41),
        trial(0.7, 0.705, 0.44),
        trial(0.8, 0.708, 0.40),
        trial(0.9, 0.71, 0.37),
    };
    // 0.6 misses the accuracy bar 0.70; of the rest, 0.7 has the highest
    // ground-truth mass on mistakes.
    const auto [idx, fallback] = pipeline::select_lambda(trials, 0.71, 0.01);
    CHECK(trials[idx].lambda == 0.7);
    CHECK_FALSE(fallback);
}

TEST_CASE("lambda selection honors a lone survivor and the fallback path") {
    const std::vector<LambdaTrial> lone{trial(0.6, 0.8, 0.2), trial(0.9, 0.5, 0.9)};
    const auto [idx, fallback] = pipeline::select_lambda(lone, 0.8, 0.05);
    CHECK(lone[idx].lambda == 0.6);
    CHECK_FALSE(fallback);

    const std::vector<LambdaTrial> none{trial(0.6, 0.50, 0.2), trial(0.9, 0.52, 0.1)};
    const auto [fidx, flag] = pipeline::select_lambda(none, 0.9, 0.01);
    CHECK(none[fidx].lambda == 0.9);  // best accuracy wins when nobody passes
    CHECK(flag);
    CHECK_THROWS(pipeline::select_lambda({}, 0.9, 0.01));
}

TEST_CASE("lambda selection breaks ties toward the larger lambda") {
    const std::vector<LambdaTrial> tied{trial(0.6, 0.75, 0.4), trial(0.8, 0.74, 0.4)};
    const auto [idx, fallback] = pipeline::select_lambda(tied, 0.75, 0.02);
    CHECK(tied[idx].lambda == 0.8);
    CHECK_FALSE(fallback);
    // Fallback accuracy ties resolve the same way.
    const std::vector<LambdaTrial> facc{trial(0.6, 0.5, 0.1), trial(0.7, 0.5, 0.1)};
    const auto [fidx, flag] = pipeline::select_lambda(facc, 0.9, 0.01);
    CHECK(facc[fidx].lambda == 0.7);
    CHECK(flag);
}

TEST_CASE("a candidate with no mistakes ranks below every measured one") {
    const std::vector<LambdaTrial> trials{trial(0.6, 0.9, std::nullopt), trial(0.7, 0.9, 0.05)};
    const auto [idx, fallback] = pipeline::select_lambda(trials, 0.9, 0.05);
    CHECK(trials[idx].lambda == 0.7);
    CHECK_FALSE(fallback);
}

TEST_CASE("model initialization is a pure function of architecture and seed") {
    const auto arch = toy_arch();
    const auto a = pipeline::make_initialized_model(arch, 11);
    const auto b = pipeline::make_initialized_model(arch, 11);
    const auto c = pipeline::make_initialized_model(arch, 12);
    CHECK(models_equal(a, b));
    CHECK_FALSE(models_equal(a, c));
}

TEST_CASE("zero epochs change nothing") {
    auto m = pipeline::make_initialized_model(toy_arch(), 3);
    const auto before = m;
    pipeline::fit_classifier(m, toy_data(60, 1), toy_cfg(/*epochs=*/0),
                             [](const data::Sample& s, std::span<double> row) {
                                 row[s.gold_label] = 1.0;
                             });
    CHECK(models_equal(m, before));
}

TEST_CASE("standard training masters a separable toy task") {
    auto m = pipeline::make_initialized_model(toy_arch(), 3);
    const auto train = toy_data(240, 1);
    const auto val = toy_data(120, 2);
    pipeline::train_standard(m, train, toy_cfg(12));
    CHECK(pipeline::gold_accuracy(m, val) >= 0.99);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
    const auto train = toy_data(120, 4);
    auto a = pipeline::make_initialized_model(toy_arch(), 9);
    auto b = pipeline::make_initialized_model(toy_arch(), 9);
    pipeline::train_standard(a, train, toy_cfg(3, 21));
    pipeline::train_standard(b, train, toy_cfg(3, 21));
    CHECK(models_equal(a, b));
    auto c = pipeline::make_initialized_model(toy_arch(), 9);
    pipeline::train_standard(c, train, toy_cfg(3, 22));
    CHECK_FALSE(models_equal(a, c));
}

TEST_CASE("probe training never moves the backbone or head") {
    const auto train = toy_data(120, 4);
    auto m = pipeline::make_initialized_model(toy_arch(), 9);
    pipeline::train_standard(m, train, toy_cfg(3));
    const auto before = m;
    pipeline::train_probes(m, train, toy_cfg(3));
    for (std::size_t i = 0; i < m.depth(); ++i) {
        CHECK(dense_equal(m.blocks()[i].dense, before.blocks()[i].dense));
    }
    CHECK(dense_equal(m.head(), before.head()));
    REQUIRE(m.probes().size() == m.depth() - 1);
    for (const auto& p : m.probes()) CHECK(p.trained);
    // A second call without the retrain flag refuses to clobber them.
    CHECK_THROWS(pipeline::train_probes(m, train, toy_cfg(3)));
    CHECK_NOTHROW(pipeline::train_probes(m, train, toy_cfg(3), /*retrain=*/true));
}

TEST_CASE("probe reports cover every layer with the head on top") {
    const auto train = toy_data(150, 6);
    const auto val = toy_data(90, 7);
    auto m = pipeline::make_initialized_model(toy_arch(), 2);
    pipeline::train_standard(m, train, toy_cfg(6));
    pipeline::train_probes(m, train, toy_cfg(6));
    const auto report = pipeline::probe_report(m, val);
    REQUIRE(report.accuracy.size() == m.depth());
    REQUIRE(report.mean_entropy.size() == m.depth());
    CHECK(report.original_accuracy == report.accuracy.back());
    CHECK(report.original_accuracy == doctest::Approx(pipeline::gold_accuracy(m, val)));
    for (double h : report.mean_entropy) {
        CHECK(h >= 0.0);
        CHECK(h <= std::log(3.0) + 1e-12);
    }
}

TEST_CASE("a probe report requires trained probes") {
    auto m = pipeline::make_initialized_model(toy_arch(), 2);
    CHECK_THROWS(pipeline::probe_report(m, toy_data(30, 1)));
}

TEST_CASE("an all-zero model reports uniform entropy at every layer") {
    const auto val = toy_data(90, 8);
    auto m = pipeline::make_initialized_model(toy_arch(), 2);
    // Attach probes through the regular path (zero epochs: fresh but counted as
    // trained), then zero every parameter in the network.
    pipeline::train_probes(m, toy_data(60, 1), toy_cfg(0));
    m.unfreeze_all();
    for (std::size_t layer = 1; layer < m.depth(); ++layer) m.set_probe_trainable(layer, true);
    for (auto& view : m.trainable_params()) {
        for (std::size_t i = 0; i < view.size; ++i) view.value[i] = 0.0;
    }
    const auto report = pipeline::probe_report(m, val);
    const double ln3 = std::log(3.0);
    for (double h : report.mean_entropy) CHECK(h == doctest::Approx(ln3).epsilon(1e-12));
    // Uniform rows argmax to class 0; accuracy is the class-0 frequency.
    double freq0 = 0.0;
    for (const auto& s : val) freq0 += s.gold_label == 0 ? 1.0 : 0.0;
    freq0 /= static_cast<double>(val.size());
    for (double a : report.accuracy) CHECK(a == doctest::Approx(freq0).epsilon(1e-12));
}

TEST_CASE("the ground-truth mass diagnostic ignores correct predictions") {
    const auto val = toy_data(90, 9);
    auto m = pipeline::make_initialized_model(toy_arch(), 2);
    for (auto& view : m.trainable_params()) {
        for (std::size_t i = 0; i < view.size; ++i) view.value[i] = 0.0;
    }
    // Uniform predictions argmax to class 0: labels 1 and 2 are incorrect and
    // each carries probability 1/3 on its gold class.
    const auto got = pipeline::avg_gt_prob_incorrect(m, val);
    REQUIRE(got.has_value());
    CHECK(*got == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

    data::Dataset all_zero = val;
    for (auto& s : all_zero) s.gold_label = 0;
    CHECK_FALSE(pipeline::avg_gt_prob_incorrect(m, all_zero).has_value());
}

TEST_CASE("distillation rejects bad lambdas and missing teachers") {
    const auto train = toy_data(60, 5);
    auto m = pipeline::make_initialized_model(toy_arch(), 4);
    pipeline::train_standard(m, train, toy_cfg(1));
    CHECK_THROWS(pipeline::distill(m, 1, 0.7, train, toy_cfg(1)));  // no probe yet
    pipeline::train_probes(m, train, toy_cfg(1));
    CHECK_THROWS(pipeline::distill(m, 1, 0.5, train, toy_cfg(1)));   // boundary excluded
    CHECK_THROWS(pipeline::distill(m, 1, 0.49, train, toy_cfg(1)));
    CHECK_THROWS(pipeline::distill(m, 1, 1.01, train, toy_cfg(1)));
    CHECK_THROWS(pipeline::distill(m, 0, 0.7, train, toy_cfg(1)));   // no layer 0
    CHECK_THROWS(pipeline::distill(m, 3, 0.7, train, toy_cfg(1)));   // top layer has no probe
    CHECK_NOTHROW(pipeline::distill(m, 1, 0.7, train, toy_cfg(1)));
}

TEST_CASE("distillation freezes the teacher and everything below it") {
    const auto train = toy_data(150, 6);
    auto m = pipeline::make_initialized_model(toy_arch(), 4);
    pipeline::train_standard(m, train, toy_cfg(4));
    pipeline::train_probes(m, train, toy_cfg(4));
    const auto before = m;
    pipeline::distill(m, 1, 0.7, train, toy_cfg(4));
    CHECK(dense_equal(m.blocks()[0].dense, before.blocks()[0].dense));
    CHECK(dense_equal(m.probe_at(1).head, before.probe_at(1).head));
    // The suffix actually moved.
    CHECK_FALSE(dense_equal(m.blocks()[1].dense, before.blocks()[1].dense));
    CHECK_FALSE(dense_equal(m.blocks()[2].dense, before.blocks()[2].dense));
    CHECK_FALSE(dense_equal(m.head(), before.head()));
}

TEST_CASE("lambda one reduces distillation to plain training of the suffix") {
    const auto train = toy_data(150, 7);
    auto base = pipeline::make_initialized_model(toy_arch(), 5);
    pipeline::train_standard(base, train, toy_cfg(3));
    pipeline::train_probes(base, train, toy_cfg(3));

    auto distilled = base;
    pipeline::distill(distilled, 1, 1.0, train, toy_cfg(3));

    // Replicate the freeze state by hand and run the ordinary fit loop: with
    // lambda = 1 the teacher coefficient is exactly zero, so the trajectories
    // must agree bit for bit.
    auto manual = base;
    manual.set_probe_trainable(1, false);
    manual.freeze_through(1);
    for (std::size_t layer = 2; layer <= manual.depth(); ++layer) {
        manual.set_block_trainable(layer, true);
    }
    manual.set_head_trainable(true);
    const std::size_t classes = manual.num_classes();
    pipeline::fit_classifier(manual, train, toy_cfg(3),
                             [classes](const data::Sample& s, std::span<double> row) {
                                 for (std::size_t c = 0; c < classes; ++c) {
                                     row[c] = c == s.gold_label ? 1.0 : 0.0;
                                 }
                             });
    CHECK(models_equal(distilled, manual));
}

TEST_CASE("the blended target gradient is the blend of the pure gradients") {
    Rng rng(29);
    for (int t = 0; t < 50; ++t) {
        Matrix logits(1, 4);
        for (std::size_t c = 0; c < 4; ++c) logits(0, c) = 2.0 * rng.normal();
        const Matrix probs = net::softmax_rows(logits);
        Matrix y(1, 4);
        y(0, rng.uniform_index(4)) = 1.0;
        Matrix teacher(1, 4);
        const auto simplex = testsupport::random_simplex(4, rng);
        for (std::size_t c = 0; c < 4; ++c) teacher(0, c) = simplex[c];
        const double lambda = 0.6;
        Matrix mix(1, 4);
        for (std::size_t c = 0; c < 4; ++c) {
            mix(0, c) = lambda * y(0, c) + (1.0 - lambda) * teacher(0, c);
        }
        const Matrix g_mix = net::softmax_ce_grad(probs, mix);
        const Matrix g_y = net::softmax_ce_grad(probs, y);
        const Matrix g_t = net::softmax_ce_grad(probs, teacher);
        for (std::size_t c = 0; c < 4; ++c) {
            const double want = lambda * g_y(0, c) + (1.0 - lambda) * g_t(0, c);
            CHECK(std::abs(g_mix(0, c) - want) < 1e-10);
        }
    }
}

TEST_CASE("parallel and serial lambda tuning agree bitwise") {
    const auto train = toy_data(150, 8);
    const auto val = toy_data(90, 9);
    auto snapshot = pipeline::make_initialized_model(toy_arch(), 6);
    pipeline::train_standard(snapshot, train, toy_cfg(3));
    pipeline::train_probes(snapshot, train, toy_cfg(3));
    const double original = pipeline::gold_accuracy(snapshot, val);

    const std::vector<double> candidates{0.6, 0.8, 0.9};
    const auto serial = pipeline::tune_lambda(snapshot, 1, candidates, train, val, original, 0.05,
                                              toy_cfg(3), /*parallel=*/false);
    const auto parallel = pipeline::tune_lambda(snapshot, 1, candidates, train, val, original, 0.05,
                                                toy_cfg(3), /*parallel=*/true);
    CHECK(serial.config.selected_lambda == parallel.config.selected_lambda);
    CHECK(serial.config.fallback == parallel.config.fallback);
    REQUIRE(serial.trials.size() == candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        CHECK(serial.trials[i].lambda == candidates[i]);
        CHECK(serial.trials[i].val_accuracy == parallel.trials[i].val_accuracy);
        CHECK(serial.trials[i].gt_prob_incorrect == parallel.trials[i].gt_prob_incorrect);
    }
    CHECK(models_equal(serial.best_model, parallel.best_model));
    // The winner is one of the per-candidate distillations, reproducible from
    // the snapshot.
    auto redo = snapshot;
    pipeline::distill(redo, 1, serial.config.selected_lambda, train, toy_cfg(3));
    CHECK(models_equal(serial.best_model, redo));
}

TEST_CASE("lambda tuning validates its candidate list") {
    const auto train = toy_data(30, 8);
    auto snapshot = pipeline::make_initialized_model(toy_arch(), 6);
    pipeline::train_standard(snapshot, train, toy_cfg(1));
    pipeline::train_probes(snapshot, train, toy_cfg(1));
    CHECK_THROWS(pipeline::tune_lambda(snapshot, 1, {}, train, train, 0.9, 0.01, toy_cfg(1)));
    CHECK_THROWS(pipeline::tune_lambda(snapshot, 1, {0.4}, train, train, 0.9, 0.01, toy_cfg(1)));
}

TEST_CASE("the full pipeline emits coherent ablation variants") {
    const auto train = toy_data(210, 10);
    const auto val = toy_data(90, 11);
    model::ArchConfig arch = toy_arch();
    pipeline::PipelineConfig cfg;
    cfg.train = toy_cfg(4, 31);
    cfg.tau = 0.01;

    const auto result = pipeline::run_full_pipeline(train, val, arch, cfg);
    CHECK(result.report.accuracy.size() == arch.blocks);
    CHECK(result.decision.target_layer >= 1);
    CHECK(result.decision.target_layer <= arch.blocks);
    CHECK(result.original_accuracy == result.report.original_accuracy);
    CHECK(result.std_model.param_count() == model::arch_param_count(arch, arch.blocks));
    CHECK(result.pruned_model.param_count() ==
          model::arch_param_count(arch, result.decision.target_layer));

    if (result.decision.target_layer == 1) {
        CHECK(result.kd_pruned.skipped);
        CHECK(models_equal(result.all_model, result.pruned_model));
    } else {
        CHECK_FALSE(result.kd_pruned.skipped);
        CHECK(result.kd_pruned.selected_lambda > 0.5);
        CHECK(result.kd_pruned.source_layer >= 1);
        CHECK(result.kd_pruned.source_layer < result.decision.target_layer);
        CHECK(result.trials_pruned.size() == cfg.lambda_candidates.size());
    }
    // The full-depth distillation variant exists whenever the net has room.
    CHECK_FALSE(result.kd_full_depth.skipped);
    CHECK(result.kd_full_depth.source_layer >= 1);
    CHECK(result.trials_full_depth.size() == cfg.lambda_candidates.size());

    // Every variant predicts proper distributions.
    Matrix x(1, 2);
    x(0, 0) = train[0].features[0];
    x(0, 1) = train[0].features[1];
    for (const auto* m :
         {&result.std_model, &result.pruned_model, &result.kd_model, &result.all_model}) {
        const Matrix p = m->predict(x);
        double sum = 0.0;
        for (std::size_t c = 0; c < 3; ++c) sum += p(0, c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }

    // And the whole thing is deterministic.
    const auto again = pipeline::run_full_pipeline(train, val, arch, cfg);
    CHECK(models_equal(result.std_model, again.std_model));
    CHECK(models_equal(result.pruned_model, again.pruned_model));
    CHECK(models_equal(result.kd_model, again.kd_model));
    CHECK(models_equal(result.all_model, again.all_model));
    CHECK(result.decision.target_layer == again.decision.target_layer);
}

TEST_CASE("the pipeline validates its own knobs") {
    const auto train = toy_data(30, 1);
    pipeline::PipelineConfig cfg;
    cfg.train = toy_cfg(1);
    cfg.tau = -0.01;
    CHECK_THROWS(pipeline::run_full_pipeline(train, train, toy_arch(), cfg));
    cfg.tau = 0.01;
    cfg.smoothing_alpha = 1.0;
    CHECK_THROWS(pipeline::run_full_pipeline(train, train, toy_arch(), cfg));
}

}  // TEST_SUITE
