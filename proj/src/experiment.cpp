#include "compcal/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "compcal/checkpoint.hpp"
#include "compcal/hash.hpp"
#include "compcal/netcore.hpp"
#include "compcal/version.hpp"

namespace compcal::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// --------------------------------------------------------------------------
// Config parsing helpers: typed field access with path-qualified diagnostics.

void check_object(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: " + where + " must be a JSON object");
}

void check_allowed_keys(const json& j, const std::string& where,
                        std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : j.items()) {
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&key](const char* a) { return key == a; }) == allowed.end()) {
            throw ConfigError("config: unknown field '" + (where.empty() ? key : where + "." + key) + "'");
        }
    }
}

std::string qualify(const std::string& where, const char* key) {
    return where.empty() ? key : where + "." + key;
}

double number_or(const json& j, const std::string& where, const char* key, double def) {
    if (!j.contains(key)) return def;
    if (!j[key].is_number()) throw ConfigError("config: " + qualify(where, key) + " must be a number");
    return j[key].get<double>();
}

std::size_t count_or(const json& j, const std::string& where, const char* key, std::size_t def) {
    if (!j.contains(key)) return def;
    if (!j[key].is_number_integer() || j[key].is_number_float() || j[key].get<long long>() < 0) {
        throw ConfigError("config: " + qualify(where, key) + " must be a non-negative integer");
    }
    return j[key].get<std::size_t>();
}

bool bool_or(const json& j, const std::string& where, const char* key, bool def) {
    if (!j.contains(key)) return def;
    if (!j[key].is_boolean()) throw ConfigError("config: " + qualify(where, key) + " must be a boolean");
    return j[key].get<bool>();
}

std::string string_or(const json& j, const std::string& where, const char* key, const std::string& def) {
    if (!j.contains(key)) return def;
    if (!j[key].is_string()) throw ConfigError("config: " + qualify(where, key) + " must be a string");
    return j[key].get<std::string>();
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::string mean_std_cell(const json& variant, const char* field) {
    if (!variant.contains(field)) return "—";
    const json& f = variant[field];
    return format_double(f["mean"].get<double>()) + " ± " + format_double(f["stddev"].get<double>());
}

}  // namespace

// --------------------------------------------------------------------------
// ExperimentConfig

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    check_object(j, "top level");
    check_allowed_keys(j, "", {"synth", "data", "arch", "train", "tau", "lambda_candidates",
                               "smoothing_alpha", "baselines", "seeds", "parallel_lambda", "latency",
                               "save_checkpoints", "out_dir"});
    ExperimentConfig cfg;

    if (j.contains("synth") && j.contains("data")) {
        throw ConfigError("config: give either 'synth' or 'data', not both");
    }
    if (j.contains("data")) {
        const json& d = j["data"];
        check_object(d, "data");
        check_allowed_keys(d, "data", {"train", "val", "test"});
        cfg.use_synth = false;
        cfg.train_path = string_or(d, "data", "train", "");
        cfg.val_path = string_or(d, "data", "val", "");
        cfg.test_path = string_or(d, "data", "test", "");
        if (cfg.train_path.empty() || cfg.val_path.empty() || cfg.test_path.empty()) {
            throw ConfigError("config: data requires 'train', 'val', and 'test' paths");
        }
        cfg.arch.input_dim = 0;  // resolved from the files
        cfg.arch.classes = 0;
    } else {
        const json s = j.contains("synth") ? j["synth"] : json::object();
        check_object(s, "synth");
        check_allowed_keys(s, "synth",
                           {"classes", "dim", "means", "mean_scale", "sigma", "n_train", "n_val",
                            "n_test", "seed", "annotator_count", "warp_rounds", "warp_twist"});
        data::SynthSpec spec;
        spec.classes = count_or(s, "synth", "classes", spec.classes);
        spec.dim = count_or(s, "synth", "dim", spec.dim);
        spec.mean_scale = number_or(s, "synth", "mean_scale", spec.mean_scale);
        spec.sigma = number_or(s, "synth", "sigma", spec.sigma);
        spec.n_train = count_or(s, "synth", "n_train", spec.n_train);
        spec.n_val = count_or(s, "synth", "n_val", spec.n_val);
        spec.n_test = count_or(s, "synth", "n_test", spec.n_test);
        spec.seed = count_or(s, "synth", "seed", spec.seed);
        spec.annotator_count = count_or(s, "synth", "annotator_count", spec.annotator_count);
        spec.warp_rounds = count_or(s, "synth", "warp_rounds", spec.warp_rounds);
        spec.warp_twist = number_or(s, "synth", "warp_twist", spec.warp_twist);
        if (s.contains("means")) {
            if (!s["means"].is_array()) throw ConfigError("config: synth.means must be an array of arrays");
            for (const json& row : s["means"]) {
                if (!row.is_array()) throw ConfigError("config: synth.means must be an array of arrays");
                std::vector<double> mean;
                for (const json& v : row) {
                    if (!v.is_number()) throw ConfigError("config: synth.means entries must be numbers");
                    mean.push_back(v.get<double>());
                }
                spec.means.push_back(std::move(mean));
            }
        }
        cfg.synth = std::move(spec);
        cfg.arch.input_dim = cfg.synth.dim;
        cfg.arch.classes = cfg.synth.classes;
    }

    const json a = j.contains("arch") ? j["arch"] : json::object();
    check_object(a, "arch");
    check_allowed_keys(a, "arch", {"blocks", "width", "dropout_rate", "activation", "input_dim",
                                   "classes"});
    // input_dim and classes follow the data source; they are accepted so a
    // config echo round-trips, but a value disagreeing with the source is an
    // error (enforced in validate()).
    cfg.arch.input_dim = count_or(a, "arch", "input_dim", cfg.arch.input_dim);
    cfg.arch.classes = count_or(a, "arch", "classes", cfg.arch.classes);
    cfg.arch.blocks = count_or(a, "arch", "blocks", cfg.arch.blocks);
    cfg.arch.width = count_or(a, "arch", "width", cfg.arch.width);
    cfg.arch.dropout_rate = number_or(a, "arch", "dropout_rate", cfg.arch.dropout_rate);
    const std::string act = string_or(a, "arch", "activation", net::to_string(cfg.arch.activation));
    try {
        cfg.arch.activation = net::activation_from_string(act);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: arch.activation: ") + e.what());
    }

    const json t = j.contains("train") ? j["train"] : json::object();
    check_object(t, "train");
    check_allowed_keys(t, "train", {"lr", "epochs", "batch_size", "weight_decay", "lr_decay"});
    cfg.train.lr = number_or(t, "train", "lr", cfg.train.lr);
    cfg.train.epochs = count_or(t, "train", "epochs", cfg.train.epochs);
    cfg.train.batch_size = count_or(t, "train", "batch_size", cfg.train.batch_size);
    cfg.train.weight_decay = number_or(t, "train", "weight_decay", cfg.train.weight_decay);
    cfg.train.lr_decay = bool_or(t, "train", "lr_decay", cfg.train.lr_decay);

    cfg.tau = number_or(j, "", "tau", cfg.tau);
    if (j.contains("lambda_candidates")) {
        if (!j["lambda_candidates"].is_array() || j["lambda_candidates"].empty()) {
            throw ConfigError("config: lambda_candidates must be a non-empty array of numbers");
        }
        cfg.lambda_candidates.clear();
        for (const json& v : j["lambda_candidates"]) {
            if (!v.is_number()) throw ConfigError("config: lambda_candidates entries must be numbers");
            cfg.lambda_candidates.push_back(v.get<double>());
        }
    }
    cfg.smoothing_alpha = number_or(j, "", "smoothing_alpha", cfg.smoothing_alpha);

    const json b = j.contains("baselines") ? j["baselines"] : json::object();
    check_object(b, "baselines");
    check_allowed_keys(b, "baselines", {"mc", "ls", "ts", "ldl", "chance", "ls_ours"});
    cfg.baselines.mc = bool_or(b, "baselines", "mc", cfg.baselines.mc);
    cfg.baselines.ls = bool_or(b, "baselines", "ls", cfg.baselines.ls);
    cfg.baselines.ts = bool_or(b, "baselines", "ts", cfg.baselines.ts);
    cfg.baselines.ldl = bool_or(b, "baselines", "ldl", cfg.baselines.ldl);
    cfg.baselines.chance = bool_or(b, "baselines", "chance", cfg.baselines.chance);
    cfg.baselines.ls_ours = bool_or(b, "baselines", "ls_ours", cfg.baselines.ls_ours);

    if (j.contains("seeds")) {
        if (!j["seeds"].is_array() || j["seeds"].empty()) {
            throw ConfigError("config: seeds must be a non-empty array of non-negative integers");
        }
        cfg.seeds.clear();
        for (const json& v : j["seeds"]) {
            if (!v.is_number_integer() || v.get<long long>() < 0) {
                throw ConfigError("config: seeds entries must be non-negative integers");
            }
            cfg.seeds.push_back(v.get<std::uint64_t>());
        }
    }
    cfg.parallel_lambda = bool_or(j, "", "parallel_lambda", cfg.parallel_lambda);

    const json l = j.contains("latency") ? j["latency"] : json::object();
    check_object(l, "latency");
    check_allowed_keys(l, "latency", {"rows", "repeats"});
    cfg.latency_rows = count_or(l, "latency", "rows", cfg.latency_rows);
    cfg.latency_repeats = count_or(l, "latency", "repeats", cfg.latency_repeats);

    cfg.save_checkpoints = bool_or(j, "", "save_checkpoints", cfg.save_checkpoints);
    cfg.out_dir = string_or(j, "", "out_dir", cfg.out_dir);
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
    }
    ExperimentConfig cfg = from_json(j);
    cfg.validate();
    return cfg;
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw ConfigError("config: at least one seed is required");
    if (use_synth) {
        try {
            synth.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config: synth: ") + e.what());
        }
    } else {
        for (const std::string& p : {train_path, val_path, test_path}) {
            if (!fs::exists(p)) throw ConfigError("config: dataset path does not exist: " + p);
        }
    }
    try {
        train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: train: ") + e.what());
    }
    if (arch.blocks < 1) throw ConfigError("config: arch.blocks must be >= 1");
    if (arch.width < 1) throw ConfigError("config: arch.width must be >= 1");
    if (use_synth && (arch.input_dim != synth.dim || arch.classes != synth.classes)) {
        throw ConfigError("config: arch.input_dim and arch.classes are derived from the data "
                          "source and may not disagree with it");
    }
    if (arch.dropout_rate < 0.0 || arch.dropout_rate >= 1.0) {
        throw ConfigError("config: arch.dropout_rate must lie in [0, 1)");
    }
    if (tau < 0.0) throw ConfigError("config: tau must be >= 0");
    for (double c : lambda_candidates) {
        if (!(c > 0.5) || c > 1.0) {
            throw ConfigError("config: lambda candidate " + std::to_string(c) +
                              " outside (0.5, 1]; the distillation weight must favor the gold term");
        }
    }
    if (smoothing_alpha < 0.0 || smoothing_alpha >= 1.0) {
        throw ConfigError("config: smoothing_alpha must lie in [0, 1)");
    }
    if (latency_rows < 1) throw ConfigError("config: latency.rows must be >= 1");
    if (latency_repeats < 10) throw ConfigError("config: latency.repeats must be >= 10");
}

json ExperimentConfig::to_json() const {
    json j;
    if (use_synth) {
        json s{{"classes", synth.classes},
               {"dim", synth.dim},
               {"mean_scale", synth.mean_scale},
               {"sigma", synth.sigma},
               {"n_train", synth.n_train},
               {"n_val", synth.n_val},
               {"n_test", synth.n_test},
               {"seed", synth.seed},
               {"annotator_count", synth.annotator_count},
               {"warp_rounds", synth.warp_rounds},
               {"warp_twist", synth.warp_twist}};
        if (!synth.means.empty()) s["means"] = synth.means;
        j["synth"] = std::move(s);
    } else {
        j["data"] = {{"train", train_path}, {"val", val_path}, {"test", test_path}};
    }
    j["arch"] = {{"blocks", arch.blocks},
                 {"width", arch.width},
                 {"dropout_rate", arch.dropout_rate},
                 {"activation", net::to_string(arch.activation)},
                 {"input_dim", arch.input_dim},
                 {"classes", arch.classes}};
    j["train"] = {{"lr", train.lr},
                  {"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"weight_decay", train.weight_decay},
                  {"lr_decay", train.lr_decay}};
    j["tau"] = tau;
    j["lambda_candidates"] = lambda_candidates;
    j["smoothing_alpha"] = smoothing_alpha;
    j["baselines"] = {{"mc", baselines.mc},   {"ls", baselines.ls},         {"ts", baselines.ts},
                      {"ldl", baselines.ldl}, {"chance", baselines.chance}, {"ls_ours", baselines.ls_ours}};
    j["seeds"] = seeds;
    j["parallel_lambda"] = parallel_lambda;
    j["latency"] = {{"rows", latency_rows}, {"repeats", latency_repeats}};
    j["save_checkpoints"] = save_checkpoints;
    return j;
}

std::string ExperimentConfig::config_hash() const { return hex64(fnv1a64(to_json().dump())); }

// --------------------------------------------------------------------------
// Data preparation

namespace {

data::Dataset with_oracle_opinions(const data::Dataset& ds, const data::PosteriorOracle& oracle) {
    data::Dataset out = ds;
    for (data::Sample& s : out) s.opinion_dist = oracle.posterior(s.features);
    return out;
}

bool all_have_dists(const data::Dataset& ds) {
    return std::all_of(ds.begin(), ds.end(),
                       [](const data::Sample& s) { return bool(s.opinion_dist); });
}

model::ArchConfig resolved_arch(const ExperimentConfig& cfg, const LoadedBundle& bundle) {
    model::ArchConfig arch = cfg.arch;
    arch.input_dim = bundle.train.front().features.size();
    if (cfg.use_synth) {
        arch.classes = cfg.synth.classes;
    } else {
        std::size_t classes = 0;
        for (const data::Dataset* ds : {&bundle.train, &bundle.val, &bundle.test}) {
            for (const data::Sample& s : *ds) {
                classes = std::max(classes, s.gold_label + 1);
                if (s.opinion_dist) classes = std::max(classes, s.opinion_dist->size());
            }
        }
        arch.classes = classes;
    }
    return arch;
}

Matrix features_of(const data::Dataset& ds) {
    Matrix x(ds.size(), ds.front().features.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::copy(ds[i].features.begin(), ds[i].features.end(), x.data() + i * x.cols());
    }
    return x;
}

}  // namespace

LoadedBundle prepare_data(const ExperimentConfig& cfg) {
    LoadedBundle bundle;
    if (cfg.use_synth) {
        data::GeneratedData gen = data::generate(cfg.synth);
        bundle.train = std::move(gen.train);
        bundle.val = std::move(gen.val);
        bundle.test = std::move(gen.test);
        bundle.oracle = std::move(gen.oracle);
        bundle.train_with_dists = with_oracle_opinions(bundle.train, *bundle.oracle);
        bundle.val_with_dists = with_oracle_opinions(bundle.val, *bundle.oracle);
    } else {
        bundle.train = data::load_jsonl(cfg.train_path);
        bundle.val = data::load_jsonl(cfg.val_path);
        bundle.test = data::load_jsonl(cfg.test_path);
        if (all_have_dists(bundle.train)) bundle.train_with_dists = bundle.train;
        if (all_have_dists(bundle.val)) bundle.val_with_dists = bundle.val;
    }
    for (const auto& [name, ds] :
         {std::pair<const char*, const data::Dataset*>{"train", &bundle.train},
          {"val", &bundle.val},
          {"test", &bundle.test}}) {
        if (ds->empty()) throw ConfigError(std::string("config: ") + name + " dataset is empty");
    }
    if (cfg.baselines.ts && bundle.val_with_dists.empty()) {
        throw ConfigError("config: temperature scaling requires opinion_dist on the validation set "
                          "(synthetic oracle or a val file carrying distributions)");
    }
    if (cfg.baselines.ldl && bundle.train_with_dists.empty()) {
        throw ConfigError("config: label-distribution learning requires opinion_dist on the training set");
    }
    if (cfg.baselines.chance && !all_have_dists(bundle.test)) {
        throw ConfigError("config: the chance baseline requires opinion_dist on the test set");
    }
    return bundle;
}

// --------------------------------------------------------------------------
// Per-seed execution

namespace {

json kd_to_json(const pipeline::KDConfig& kd, const std::vector<pipeline::LambdaTrial>& trials) {
    json j{{"source_layer", kd.source_layer},
           {"lambda", kd.selected_lambda},
           {"fallback", kd.fallback},
           {"skipped", kd.skipped},
           {"candidates", kd.lambda_candidates}};
    json ts = json::array();
    for (const pipeline::LambdaTrial& t : trials) {
        json tj{{"lambda", t.lambda}, {"val_accuracy", t.val_accuracy}};
        if (t.gt_prob_incorrect) tj["gt_prob_incorrect"] = *t.gt_prob_incorrect;
        ts.push_back(std::move(tj));
    }
    j["trials"] = std::move(ts);
    return j;
}

json decisions_to_json(const pipeline::PipelineResult& pr) {
    return json{{"target_layer", pr.decision.target_layer},
                {"tau", pr.decision.tau},
                {"original_accuracy", pr.original_accuracy},
                {"kd_pruned", kd_to_json(pr.kd_pruned, pr.trials_pruned)},
                {"kd_full_depth", kd_to_json(pr.kd_full_depth, pr.trials_full_depth)}};
}

}  // namespace

SeedRun run_one_seed(const ExperimentConfig& cfg, const LoadedBundle& bundle, std::uint64_t seed) {
    const model::ArchConfig arch = resolved_arch(cfg, bundle);
    pipeline::TrainConfig tcfg = cfg.train;
    tcfg.seed = seed;
    pipeline::PipelineConfig pcfg;
    pcfg.train = tcfg;
    pcfg.tau = cfg.tau;
    pcfg.lambda_candidates = cfg.lambda_candidates;
    pcfg.smoothing_alpha = 0.0;
    pcfg.parallel_lambda = cfg.parallel_lambda;

    SeedRun out{seed, pipeline::run_full_pipeline(bundle.train, bundle.val, arch, pcfg)};

    const Matrix x_test = features_of(bundle.test);
    auto eval_model = [&](const model::LayeredClassifier& m) {
        return metrics::evaluate(m.predict(x_test), bundle.test, m.param_count());
    };
    out.variant_metrics["std"] = eval_model(out.main.std_model);
    out.variant_metrics["pruning"] = eval_model(out.main.pruned_model);
    out.variant_metrics["kd"] = eval_model(out.main.kd_model);
    out.variant_metrics["all"] = eval_model(out.main.all_model);

    if (cfg.baselines.mc) {
        baselines::MCSpec mc_spec;
        mc_spec.seed = seed;
        const Matrix preds = baselines::mc_dropout_predict(out.main.std_model, x_test, mc_spec);
        out.variant_metrics["mc"] =
            metrics::evaluate(preds, bundle.test, out.main.std_model.param_count());
    }

    if (cfg.baselines.ls_ours) {
        pipeline::PipelineConfig smooth_cfg = pcfg;
        smooth_cfg.smoothing_alpha = cfg.smoothing_alpha;
        out.smoothed = pipeline::run_full_pipeline(bundle.train, bundle.val, arch, smooth_cfg);
        if (cfg.baselines.ls) out.variant_metrics["ls"] = eval_model(out.smoothed->std_model);
        out.variant_metrics["ls_ours"] = eval_model(out.smoothed->all_model);
    } else if (cfg.baselines.ls) {
        model::LayeredClassifier ls = pipeline::make_initialized_model(arch, seed);
        baselines::train_label_smoothing(ls, bundle.train, cfg.smoothing_alpha, tcfg);
        out.variant_metrics["ls"] = eval_model(ls);
        out.ls_model = std::move(ls);
    }

    if (cfg.baselines.ts) {
        const Matrix val_logits =
            out.main.std_model.forward(features_of(bundle.val), model::ForwardOptions{}).head_logits;
        const baselines::TemperatureSpec ts =
            baselines::fit_temperature(val_logits, bundle.val_with_dists);
        out.temperature = ts.temperature;
        const Matrix test_logits = out.main.std_model.forward(x_test, model::ForwardOptions{}).head_logits;
        out.variant_metrics["ts"] =
            metrics::evaluate(baselines::apply_temperature(test_logits, ts.temperature), bundle.test,
                              out.main.std_model.param_count());
    }

    if (cfg.baselines.ldl) {
        model::LayeredClassifier ldl = pipeline::make_initialized_model(arch, seed);
        baselines::train_ldl(ldl, bundle.train_with_dists, tcfg);
        out.variant_metrics["ldl"] = eval_model(ldl);
        out.ldl_model = std::move(ldl);
    }

    if (cfg.baselines.chance) out.variant_metrics["chance"] = baselines::chance_eval(bundle.test);

    return out;
}

json SeedRun::to_json() const {
    json j;
    j["seed"] = seed;
    j["probe_report"] = {{"accuracy", main.report.accuracy},
                         {"mean_entropy", main.report.mean_entropy}};
    j["decisions"] = decisions_to_json(main);
    if (smoothed) j["smoothed_decisions"] = decisions_to_json(*smoothed);
    if (temperature) j["temperature"] = *temperature;
    json m;
    for (const auto& [name, report] : variant_metrics) m[name] = report.to_json();
    j["metrics"] = std::move(m);
    return j;
}

json aggregate_runs(const std::vector<SeedRun>& runs) {
    // Collect per-variant, per-field samples across seeds.
    std::map<std::string, std::map<std::string, std::vector<double>>> samples;
    for (const SeedRun& run : runs) {
        for (const auto& [variant, report] : run.variant_metrics) {
            auto& fields = samples[variant];
            if (report.jsd) fields["jsd"].push_back(*report.jsd);
            if (report.kl) fields["kl"].push_back(*report.kl);
            fields["acc"].push_back(report.acc);
            if (report.diff) fields["diff"].push_back(*report.diff);
            fields["mean_entropy"].push_back(report.mean_entropy);
            fields["param_count"].push_back(static_cast<double>(report.param_count));
        }
    }
    json agg;
    for (const auto& [variant, fields] : samples) {
        json vj;
        for (const auto& [field, values] : fields) {
            double mean = 0.0;
            for (double v : values) mean += v;
            mean /= static_cast<double>(values.size());
            double var = 0.0;
            if (values.size() > 1) {
                for (double v : values) var += (v - mean) * (v - mean);
                var /= static_cast<double>(values.size() - 1);
            }
            vj[field] = {{"mean", mean}, {"stddev", std::sqrt(var)}, {"n", values.size()}};
        }
        agg[variant] = std::move(vj);
    }
    return agg;
}

// --------------------------------------------------------------------------
// Filesystem plumbing

void write_atomic(const std::string& path, const std::string& content) {
    const fs::path target(path);
    const fs::path tmp(path + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

namespace {

void refuse_or_remove(const fs::path& p, bool force) {
    if (!fs::exists(p)) return;
    if (!force) {
        throw std::runtime_error(p.string() + " already exists; pass --force to overwrite");
    }
    fs::remove_all(p);
}

}  // namespace

// --------------------------------------------------------------------------
// Subcommands

void cmd_synth(const ExperimentConfig& cfg, const std::string& out_dir, bool force) {
    if (!cfg.use_synth) throw ConfigError("synth: the config selects file-based data; nothing to generate");
    if (out_dir.empty()) throw ConfigError("synth: an output directory is required");
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    for (const char* name : {"train.jsonl", "val.jsonl", "test.jsonl"}) {
        refuse_or_remove(dir / name, force);
    }
    data::GeneratedData gen = data::generate(cfg.synth);
    data::save_jsonl(gen.train, (dir / "train.jsonl").string());
    data::save_jsonl(gen.val, (dir / "val.jsonl").string());
    data::save_jsonl(gen.test, (dir / "test.jsonl").string());
}

namespace {

json versions_json() {
    return json{{"compcal", kVersion},
                {"compiler", __VERSION__},
                {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

std::string seed_tag(std::uint64_t seed) { return "s" + std::to_string(seed); }

std::string render_report(const json& metrics) {
    const json& agg = metrics.at("aggregate");
    std::ostringstream md;
    md << "# Run report\n\n";
    md << "Config hash: `" << metrics.at("config_hash").get<std::string>() << "`; seeds:";
    for (const json& s : metrics.at("seeds")) md << " " << s.get<std::uint64_t>();
    md << ". Cells are mean ± sample stddev over seeds.\n\n";

    const std::vector<std::pair<std::string, std::string>> method_rows = {
        {"std", "STD"},     {"mc", "MC"},         {"ls", "LS"},
        {"ts", "TS*"},      {"ldl", "LDL*"},      {"chance", "Chance"},
        {"all", "Ours"}};
    md << "## Distribution fit\n\n";
    md << "Methods marked * consume distribution-labeled data (extra resources).\n\n";
    md << "| Method | JSD ↓ | KL ↓ | Acc ↑ |\n|---|---|---|---|\n";
    for (const auto& [key, label] : method_rows) {
        if (!agg.contains(key)) continue;
        md << "| " << label << " | " << mean_std_cell(agg[key], "jsd") << " | "
           << mean_std_cell(agg[key], "kl") << " | " << mean_std_cell(agg[key], "acc") << " |\n";
    }

    const std::vector<std::pair<std::string, std::string>> ablation_rows = {
        {"std", "STD"}, {"pruning", "+ Pruning"}, {"kd", "+ KD"}, {"all", "+ All"}};
    md << "\n## Ablation\n\n| Variant | JSD ↓ | KL ↓ | Acc ↑ |\n|---|---|---|---|\n";
    for (const auto& [key, label] : ablation_rows) {
        if (!agg.contains(key)) continue;
        md << "| " << label << " | " << mean_std_cell(agg[key], "jsd") << " | "
           << mean_std_cell(agg[key], "kl") << " | " << mean_std_cell(agg[key], "acc") << " |\n";
    }

    md << "\n## Gap on incorrect predictions\n\n"
       << "Mean (opinion mass − predicted mass) on the majority label over misclassified test "
          "samples.\n\n| Variant | Diff | n seeds defined |\n|---|---|---|\n";
    for (const auto& [key, label] : ablation_rows) {
        if (!agg.contains(key) || !agg[key].contains("diff")) continue;
        md << "| " << label << " | " << mean_std_cell(agg[key], "diff") << " | "
           << agg[key]["diff"]["n"].get<std::size_t>() << " |\n";
    }

    if (agg.contains("ls") && agg.contains("ls_ours")) {
        md << "\n## Smoothing with the pipeline\n\n| Variant | JSD ↓ | KL ↓ | Acc ↑ |\n|---|---|---|---|\n";
        for (const auto& [key, label] :
             std::vector<std::pair<std::string, std::string>>{{"ls", "LS"}, {"ls_ours", "LS + Ours"}}) {
            md << "| " << label << " | " << mean_std_cell(agg[key], "jsd") << " | "
               << mean_std_cell(agg[key], "kl") << " | " << mean_std_cell(agg[key], "acc") << " |\n";
        }
    }

    md << "\n## Compression\n\n| Variant | Parameters (mean over seeds) |\n|---|---|\n";
    for (const auto& [key, label] : ablation_rows) {
        if (!agg.contains(key)) continue;
        md << "| " << label << " | "
           << static_cast<long long>(agg[key]["param_count"]["mean"].get<double>()) << " |\n";
    }

    md << "\n## Decisions\n\n| Seed | Target layer | Source layer | λ | Notes |\n|---|---|---|---|---|\n";
    for (const json& seed_entry : metrics.at("per_seed")) {
        const json& d = seed_entry.at("decisions");
        const json& kd = d.at("kd_pruned");
        std::string notes;
        if (kd.at("skipped").get<bool>()) notes += "distillation skipped (target = 1); ";
        if (kd.at("fallback").get<bool>()) notes += "no λ cleared the accuracy bar; ";
        md << "| " << seed_entry.at("seed").get<std::uint64_t>() << " | "
           << d.at("target_layer").get<std::size_t>() << " | ";
        if (kd.at("skipped").get<bool>()) {
            md << "— | — | ";
        } else {
            md << kd.at("source_layer").get<std::size_t>() << " | " << kd.at("lambda").get<double>()
               << " | ";
        }
        md << (notes.empty() ? "—" : notes) << " |\n";
    }
    md << "\n";
    return md.str();
}

}  // namespace

void cmd_run(const ExperimentConfig& cfg, const std::string& out_dir, bool force) {
    if (out_dir.empty()) throw ConfigError("run: an output directory is required");
    cfg.validate();
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    for (const char* name : {"metrics.json", "manifest.json", "report.md"}) {
        refuse_or_remove(dir / name, force);
    }
    refuse_or_remove(dir / "checkpoints", force);

    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const LoadedBundle bundle = prepare_data(cfg);
    const auto t_data = clock::now();

    std::vector<SeedRun> runs;
    json timings;
    timings["prepare_data"] = std::chrono::duration<double, std::milli>(t_data - t0).count();
    for (std::uint64_t seed : cfg.seeds) {
        const auto s0 = clock::now();
        runs.push_back(run_one_seed(cfg, bundle, seed));
        const auto s1 = clock::now();
        timings["seed"][seed_tag(seed)] = std::chrono::duration<double, std::milli>(s1 - s0).count();
    }

    json metrics_json;
    metrics_json["config_hash"] = cfg.config_hash();
    metrics_json["seeds"] = cfg.seeds;
    json per_seed = json::array();
    for (const SeedRun& run : runs) per_seed.push_back(run.to_json());
    metrics_json["per_seed"] = std::move(per_seed);
    metrics_json["aggregate"] = aggregate_runs(runs);
    write_atomic((dir / "metrics.json").string(), metrics_json.dump(2) + "\n");

    // Host-dependent numbers live in the manifest, never in metrics.json.
    json latency;
    for (const SeedRun& run : runs) {
        const metrics::LatencyStats orig =
            metrics::latency_probe(run.main.std_model, cfg.latency_rows, cfg.latency_repeats);
        const metrics::LatencyStats pruned =
            metrics::latency_probe(run.main.pruned_model, cfg.latency_rows, cfg.latency_repeats);
        latency[seed_tag(run.seed)] = {
            {"original", {{"mean_ms", orig.mean_ms}, {"stddev_ms", orig.stddev_ms}}},
            {"pruned", {{"mean_ms", pruned.mean_ms}, {"stddev_ms", pruned.stddev_ms}}}};
    }

    if (cfg.save_checkpoints) {
        fs::create_directories(dir / "checkpoints");
        model::CheckpointExtra extra;
        extra.config_hash = cfg.config_hash();
        for (const SeedRun& run : runs) {
            const std::string prefix = (dir / "checkpoints" / seed_tag(run.seed)).string();
            model::save_checkpoint(run.main.std_model, prefix + "_std.ckpt", extra);
            model::save_checkpoint(run.main.pruned_model, prefix + "_pruning.ckpt", extra);
            model::save_checkpoint(run.main.kd_model, prefix + "_kd.ckpt", extra);
            model::save_checkpoint(run.main.all_model, prefix + "_all.ckpt", extra);
            if (run.smoothed) {
                model::save_checkpoint(run.smoothed->std_model, prefix + "_ls.ckpt", extra);
                model::save_checkpoint(run.smoothed->all_model, prefix + "_ls_ours.ckpt", extra);
            } else if (run.ls_model) {
                model::save_checkpoint(*run.ls_model, prefix + "_ls.ckpt", extra);
            }
            if (run.ldl_model) model::save_checkpoint(*run.ldl_model, prefix + "_ldl.ckpt", extra);
        }
    }

    json manifest;
    json cfg_echo = cfg.to_json();
    cfg_echo["out_dir"] = out_dir;
    manifest["config"] = std::move(cfg_echo);
    manifest["config_hash"] = cfg.config_hash();
    manifest["versions"] = versions_json();
    manifest["timings_ms"] = std::move(timings);
    manifest["latency"] = std::move(latency);
    write_atomic((dir / "manifest.json").string(), manifest.dump(2) + "\n");

    write_atomic((dir / "report.md").string(), render_report(metrics_json));
}

metrics::EvalReport cmd_eval(const std::string& checkpoint_path, const std::string& dataset_path,
                             const std::string& out_path) {
    model::LoadedCheckpoint loaded = model::load_checkpoint(checkpoint_path);
    const data::Dataset ds = data::load_jsonl(dataset_path);
    if (ds.empty()) throw std::runtime_error("eval: dataset " + dataset_path + " is empty");
    const Matrix preds = loaded.model.predict(features_of(ds));
    metrics::EvalReport report = metrics::evaluate(preds, ds, loaded.model.param_count());
    if (!out_path.empty()) write_atomic(out_path, report.to_json().dump(2) + "\n");
    return report;
}

std::string cmd_report(const std::string& run_dir) {
    const fs::path metrics_path = fs::path(run_dir) / "metrics.json";
    std::ifstream in(metrics_path);
    if (!in) throw std::runtime_error("report: cannot open " + metrics_path.string() +
                                      " (run the 'run' command first)");
    json metrics;
    try {
        metrics = json::parse(in);
    } catch (const json::exception& e) {
        throw std::runtime_error("report: " + metrics_path.string() + " is not valid JSON: " + e.what());
    }
    const std::string md = render_report(metrics);
    write_atomic((fs::path(run_dir) / "report.md").string(), md);
    return md;
}

std::string cmd_bench(const std::vector<std::string>& checkpoint_paths, std::size_t latency_rows,
                      std::size_t latency_repeats) {
    if (checkpoint_paths.empty()) throw ConfigError("bench: at least one checkpoint is required");
    std::ostringstream md;
    md << "# Model benchmark\n\n| Checkpoint | Blocks | Parameters | Δ params vs first | Latency "
          "(ms, mean ± stddev) |\n|---|---|---|---|---|\n";
    long long first_params = -1;
    std::vector<std::string> block_details;
    for (const std::string& path : checkpoint_paths) {
        model::LoadedCheckpoint loaded = model::load_checkpoint(path);
        const model::LayeredClassifier& m = loaded.model;
        const long long params = static_cast<long long>(m.param_count());
        if (first_params < 0) first_params = params;
        const metrics::LatencyStats lat = metrics::latency_probe(m, latency_rows, latency_repeats);
        md << "| " << path << " | " << m.depth() << " | " << params << " | "
           << (params - first_params) << " | " << format_double(lat.mean_ms) << " ± "
           << format_double(lat.stddev_ms) << " |\n";

        std::ostringstream detail;
        detail << "- `" << path << "`: per-block parameters:";
        for (const model::EncoderBlock& b : m.blocks()) {
            detail << " " << b.dense.param_count();
        }
        detail << "; head: " << m.head().param_count();
        block_details.push_back(detail.str());
    }
    md << "\nPer-block breakdown (exact counts):\n\n";
    for (const std::string& d : block_details) md << d << "\n";
    md << "\nLatency ordering is reported for this host only.\n";
    return md.str();
}

}  // namespace compcal::cli
