#include "compcal/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "compcal/prob.hpp"

namespace compcal::data {

namespace {

using nlohmann::json;

std::vector<double> stable_softmax(const std::vector<double>& logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

std::string padded_id(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%06zu", prefix, i);
    return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// FeatureWarp

FeatureWarp::FeatureWarp(std::size_t dim, std::size_t rounds, double twist, std::uint64_t seed,
                         double hinge_scale)
    : dim_(dim), rounds_(rounds), twist_(twist), hinge_scale_(hinge_scale) {
    if (rounds_ == 0) return;
    if (dim_ == 0) throw std::invalid_argument("FeatureWarp: dim must be positive");
    if (twist_ < 0.0) throw std::invalid_argument("FeatureWarp: twist must be >= 0");
    Rng rng = Rng::derive(seed, 0x5741525000ULL);  // private warp stream
    // Random Gaussian matrix, orthonormalized row by row (modified
    // Gram-Schmidt); the result is a uniformly seeded rotation/reflection.
    rotation_.resize(dim_ * dim_);
    for (double& v : rotation_) v = rng.normal();
    for (std::size_t i = 0; i < dim_; ++i) {
        double* row_i = rotation_.data() + i * dim_;
        for (std::size_t j = 0; j < i; ++j) {
            const double* row_j = rotation_.data() + j * dim_;
            double dot = 0.0;
            for (std::size_t k = 0; k < dim_; ++k) dot += row_i[k] * row_j[k];
            for (std::size_t k = 0; k < dim_; ++k) row_i[k] -= dot * row_j[k];
        }
        double norm = 0.0;
        for (std::size_t k = 0; k < dim_; ++k) norm += row_i[k] * row_i[k];
        norm = std::sqrt(norm);
        if (norm < 1e-9) throw std::runtime_error("FeatureWarp: degenerate rotation draw");
        for (std::size_t k = 0; k < dim_; ++k) row_i[k] /= norm;
    }
}

void FeatureWarp::rotate(std::vector<double>& v, bool transpose) const {
    std::vector<double> out(dim_, 0.0);
    for (std::size_t i = 0; i < dim_; ++i) {
        const double* row = rotation_.data() + i * dim_;
        if (transpose) {
            for (std::size_t j = 0; j < dim_; ++j) out[j] += row[j] * v[i];
        } else {
            double s = 0.0;
            for (std::size_t j = 0; j < dim_; ++j) s += row[j] * v[j];
            out[i] = s;
        }
    }
    v = std::move(out);
}

void FeatureWarp::fold_planes(std::vector<double>& v, bool inverse) const {
    // One stage shears one coordinate of the leading pair by a hinged read of
    // the other: stage k (mod 4) applies, on pair coordinates (a, b),
    //   0: b += t*relu(a - c)   1: a -= t*relu(b - c)
    //   2: b -= t*relu(c - a)   3: a += t*relu(c - b)
    // where the hinge offset c cycles through a fixed table so successive
    // stages kink the plane along distinct lines.  The sheared coordinate
    // never feeds its own stage, so running the stages backwards with the
    // shear negated inverts the map exactly.
    static constexpr double kHinge[20] = {1.0, 0.0, 0.0, 1.0, 0.85, 0.15, 0.15, 0.85,
                                          0.5, 0.5, 0.5, 0.5, 0.7, 0.3, 0.3, 0.7,
                                          0.9, 0.1, 0.1, 0.9};
    const auto relu = [](double x) { return x > 0.0 ? x : 0.0; };
    const auto stage = [&](std::size_t k, double dir) {
        double& a = v[0];
        double& b = v[1];
        const double c = hinge_scale_ * kHinge[k % 20];
        switch (k % 4) {
            case 0: b += dir * twist_ * relu(a - c); break;
            case 1: a -= dir * twist_ * relu(b - c); break;
            case 2: b -= dir * twist_ * relu(c - a); break;
            default: a += dir * twist_ * relu(c - b); break;
        }
    };
    if (v.size() < 2) return;
    if (!inverse) {
        for (std::size_t k = 0; k < rounds_; ++k) stage(k, 1.0);
    } else {
        for (std::size_t k = rounds_; k-- > 0;) stage(k, -1.0);
    }
}

std::vector<double> FeatureWarp::warp(std::vector<double> z) const {
    if (rounds_ == 0) return z;
    if (z.size() != dim_) {
        throw std::invalid_argument("FeatureWarp::warp: vector length " + std::to_string(z.size()) +
                                    " does not match dim " + std::to_string(dim_));
    }
    fold_planes(z, false);
    rotate(z, false);
    return z;
}

std::vector<double> FeatureWarp::unwarp(std::vector<double> x) const {
    if (rounds_ == 0) return x;
    if (x.size() != dim_) {
        throw std::invalid_argument("FeatureWarp::unwarp: vector length " + std::to_string(x.size()) +
                                    " does not match dim " + std::to_string(dim_));
    }
    rotate(x, true);
    fold_planes(x, true);
    return x;
}

// ---------------------------------------------------------------------------
// SynthSpec / PosteriorOracle

void SynthSpec::validate() const {
    if (classes < 2) throw std::invalid_argument("SynthSpec: classes must be >= 2");
    if (dim < 1) throw std::invalid_argument("SynthSpec: dim must be >= 1");
    if (sigma <= 0.0) throw std::invalid_argument("SynthSpec: sigma must be > 0");
    if (n_train < 1 || n_val < 1 || n_test < 1) {
        throw std::invalid_argument("SynthSpec: every split size must be >= 1");
    }
    if (!means.empty()) {
        if (means.size() != classes) {
            throw std::invalid_argument("SynthSpec: expected " + std::to_string(classes) +
                                        " class means, got " + std::to_string(means.size()));
        }
        for (const auto& m : means) {
            if (m.size() != dim) {
                throw std::invalid_argument("SynthSpec: class mean dimension " +
                                            std::to_string(m.size()) + " does not match dim " +
                                            std::to_string(dim));
            }
        }
    } else if (dim < 2) {
        throw std::invalid_argument("SynthSpec: the default circular mean layout needs dim >= 2");
    }
    const auto resolved = resolved_means();
    for (std::size_t a = 0; a < resolved.size(); ++a) {
        for (std::size_t b = a + 1; b < resolved.size(); ++b) {
            if (resolved[a] == resolved[b]) {
                throw std::invalid_argument("SynthSpec: duplicate class means (classes " +
                                            std::to_string(a) + " and " + std::to_string(b) +
                                            " are indistinguishable)");
            }
        }
    }
    if (warp_rounds > 0 && warp_twist < 0.0) {
        throw std::invalid_argument("SynthSpec: warp_twist must be >= 0");
    }
}

std::vector<std::vector<double>> SynthSpec::resolved_means() const {
    if (!means.empty()) return means;
    constexpr double two_pi = 6.283185307179586476925286766559;
    std::vector<std::vector<double>> out(classes, std::vector<double>(dim, 0.0));
    for (std::size_t c = 0; c < classes; ++c) {
        // Evenly spaced directions on a circle in the first two coordinates —
        // the plane the feature warp twists, so the classes become
        // interleaved spiral arms in feature space.
        const double angle = two_pi * static_cast<double>(c) / static_cast<double>(classes);
        out[c][0] = mean_scale * std::cos(angle);
        out[c][1] = mean_scale * std::sin(angle);
    }
    return out;
}

PosteriorOracle::PosteriorOracle(std::vector<std::vector<double>> means, double sigma, FeatureWarp warp)
    : means_(std::move(means)), sigma_(sigma), warp_(std::move(warp)) {
    if (means_.size() < 2) throw std::invalid_argument("PosteriorOracle: need at least 2 class means");
    if (sigma_ <= 0.0) throw std::invalid_argument("PosteriorOracle: sigma must be > 0");
    for (const auto& m : means_) {
        if (m.size() != means_.front().size()) {
            throw std::invalid_argument("PosteriorOracle: inconsistent mean dimensions");
        }
    }
    if (!warp_.identity() && warp_.dim() != dim()) {
        throw std::invalid_argument("PosteriorOracle: warp dimension does not match means");
    }
}

std::vector<double> PosteriorOracle::posterior(std::span<const double> x) const {
    if (warp_.identity()) return posterior_latent(x);
    const std::vector<double> z = warp_.unwarp(std::vector<double>(x.begin(), x.end()));
    return posterior_latent(z);
}

std::vector<double> PosteriorOracle::posterior_latent(std::span<const double> z) const {
    if (z.size() != dim()) {
        throw std::invalid_argument("posterior: point dimension " + std::to_string(z.size()) +
                                    " does not match oracle dimension " + std::to_string(dim()));
    }
    std::vector<double> logits(means_.size());
    const double inv = 1.0 / (2.0 * sigma_ * sigma_);
    for (std::size_t c = 0; c < means_.size(); ++c) {
        double d2 = 0.0;
        for (std::size_t j = 0; j < z.size(); ++j) {
            const double diff = z[j] - means_[c][j];
            d2 += diff * diff;
        }
        logits[c] = -d2 * inv;
    }
    return stable_softmax(logits);
}

// ---------------------------------------------------------------------------
// Generation

std::size_t sample_categorical(std::span<const double> dist, Rng& rng) {
    validate_simplex(dist, "sample_categorical: dist");
    const double u = rng.uniform();
    double acc = 0.0;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        acc += dist[i];
        if (u < acc) return i;
    }
    return dist.size() - 1;
}

namespace {

Dataset draw_split(const char* prefix, std::size_t count, bool with_opinion, const SynthSpec& spec,
                   const std::vector<std::vector<double>>& means, const PosteriorOracle& oracle,
                   Rng rng) {
    Dataset out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t c = rng.uniform_index(spec.classes);
        std::vector<double> z(spec.dim);
        for (std::size_t j = 0; j < spec.dim; ++j) z[j] = means[c][j] + spec.sigma * rng.normal();
        const std::vector<double> post = oracle.posterior_latent(z);

        Sample s;
        s.id = padded_id(prefix, i);
        s.gold_label = sample_categorical(post, rng);
        s.features = oracle.warp().identity() ? std::move(z) : oracle.warp().warp(std::move(z));
        if (with_opinion) {
            if (spec.annotator_count == 0) {
                s.opinion_dist = post;
            } else {
                std::vector<double> hist(spec.classes, 0.0);
                for (std::size_t a = 0; a < spec.annotator_count; ++a) {
                    hist[sample_categorical(post, rng)] += 1.0;
                }
                for (double& h : hist) h /= static_cast<double>(spec.annotator_count);
                s.opinion_dist = std::move(hist);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

GeneratedData generate(const SynthSpec& spec) {
    spec.validate();
    const auto means = spec.resolved_means();
    FeatureWarp warp = spec.warp_rounds == 0
                           ? FeatureWarp{}
                           : FeatureWarp(spec.dim, spec.warp_rounds, spec.warp_twist, spec.seed, spec.warp_hinge);
    PosteriorOracle oracle(means, spec.sigma, std::move(warp));

    Dataset train = draw_split("train", spec.n_train, false, spec, means, oracle, Rng::derive(spec.seed, 1));
    Dataset val = draw_split("val", spec.n_val, false, spec, means, oracle, Rng::derive(spec.seed, 2));
    Dataset test = draw_split("test", spec.n_test, true, spec, means, oracle, Rng::derive(spec.seed, 3));
    return {std::move(train), std::move(val), std::move(test), std::move(oracle)};
}

// ---------------------------------------------------------------------------
// JSONL IO

Dataset load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_jsonl: cannot open " + path);

    Dataset out;
    std::string line;
    std::size_t line_no = 0;
    std::size_t feature_dim = 0;
    std::size_t opinion_dim = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw std::runtime_error(where + ": malformed JSON record: " + e.what());
        }
        if (!j.is_object()) throw std::runtime_error(where + ": record is not an object");

        Sample s;
        if (!j.contains("id") || !j["id"].is_string()) {
            throw std::runtime_error(where + ": missing or non-string field 'id'");
        }
        s.id = j["id"].get<std::string>();

        if (!j.contains("features") || !j["features"].is_array() || j["features"].empty()) {
            throw std::runtime_error(where + ": missing or empty array field 'features'");
        }
        for (const json& v : j["features"]) {
            if (!v.is_number()) throw std::runtime_error(where + ": non-numeric entry in 'features'");
            s.features.push_back(v.get<double>());
        }
        if (feature_dim == 0) {
            feature_dim = s.features.size();
        } else if (s.features.size() != feature_dim) {
            throw std::runtime_error(where + ": feature dimension " + std::to_string(s.features.size()) +
                                     " differs from earlier records (" + std::to_string(feature_dim) + ")");
        }

        if (!j.contains("gold_label") || !j["gold_label"].is_number_integer() ||
            j["gold_label"].get<long long>() < 0) {
            throw std::runtime_error(where + ": missing or invalid field 'gold_label'");
        }
        s.gold_label = j["gold_label"].get<std::size_t>();

        if (j.contains("opinion_dist")) {
            if (!j["opinion_dist"].is_array() || j["opinion_dist"].empty()) {
                throw std::runtime_error(where + ": 'opinion_dist' must be a non-empty array");
            }
            std::vector<double> dist;
            for (const json& v : j["opinion_dist"]) {
                if (!v.is_number()) throw std::runtime_error(where + ": non-numeric entry in 'opinion_dist'");
                dist.push_back(v.get<double>());
            }
            if (opinion_dim == 0) {
                opinion_dim = dist.size();
            } else if (dist.size() != opinion_dim) {
                throw std::runtime_error(where + ": opinion_dist length " + std::to_string(dist.size()) +
                                         " differs from earlier records (" + std::to_string(opinion_dim) +
                                         ")");
            }
            if (!is_simplex(dist, 1e-9)) {
                throw std::runtime_error(where + ": 'opinion_dist' does not sum to 1 within 1e-9");
            }
            s.opinion_dist = std::move(dist);
        }
        out.push_back(std::move(s));
    }
    return out;
}

void save_jsonl(const Dataset& dataset, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_jsonl: cannot open " + path + " for writing");
    for (const Sample& s : dataset) {
        json j;
        j["id"] = s.id;
        j["features"] = s.features;
        j["gold_label"] = s.gold_label;
        if (s.opinion_dist) j["opinion_dist"] = *s.opinion_dist;
        out << j.dump() << '\n';
    }
    out.flush();
    if (!out) throw std::runtime_error("save_jsonl: write failed for " + path);
}

}  // namespace compcal::data
