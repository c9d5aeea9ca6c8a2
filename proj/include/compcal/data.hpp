#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "compcal/rng.hpp"

namespace compcal::data {

struct Sample {
    std::string id;
    std::vector<double> features;
    std::size_t gold_label = 0;
    std::optional<std::vector<double>> opinion_dist;
};

using Dataset = std::vector<Sample>;

// Piecewise-linear bijection on feature space: each of the first two
// coordinate pairs goes through `rounds` alternating one-sided shear stages
// (v += twist*max(0,u), then u -= twist*max(0,v), then v -= twist*max(0,-u),
// then u += twist*max(0,-v), cycling), and a seeded orthogonal rotation then
// mixes all coordinates so published features carry no axis-aligned
// structure. Every stage shifts one coordinate by a function of the other,
// so the exact inverse is the transposed rotation followed by the same
// shears subtracted in reverse order; unwarp() is closed form. Each stage is
// one hinge of computation: an affine probe cannot flatten a k-stage fold,
// while a ReLU stack expresses it exactly layer by layer, so probe accuracy
// climbs with depth without blurring what the full network can fit - the
// regime the pruning rules need. rounds = 0 is the identity.
class FeatureWarp {
public:
    FeatureWarp() = default;  // identity
    FeatureWarp(std::size_t dim, std::size_t rounds, double twist, std::uint64_t seed,
                double hinge_scale = 1.0);

    std::vector<double> warp(std::vector<double> z) const;
    std::vector<double> unwarp(std::vector<double> x) const;
    bool identity() const { return rounds_ == 0; }
    std::size_t dim() const { return dim_; }

private:
    std::size_t dim_ = 0;
    std::size_t rounds_ = 0;
    double twist_ = 0.0;
    double hinge_scale_ = 1.0;
    std::vector<double> rotation_;  // dim x dim orthogonal, row-major

    void rotate(std::vector<double>& v, bool transpose) const;
    void fold_planes(std::vector<double>& v, bool inverse) const;
};

struct SynthSpec {
    std::size_t classes = 4;
    std::size_t dim = 16;
    // Class means; empty selects the default layout: evenly spaced points on
    // a circle of radius mean_scale in the first two coordinates, the plane
    // the feature warp twists.
    std::vector<std::vector<double>> means;
    double mean_scale = 1.0;
    double sigma = 0.55;
    std::size_t n_train = 5000;
    std::size_t n_val = 1000;
    std::size_t n_test = 2000;
    std::uint64_t seed = 7;
    // 0: test opinion_dist is the exact posterior; k > 0: normalized histogram
    // of k simulated annotator draws.
    std::size_t annotator_count = 0;
    // Feature-warp knobs; warp_rounds = 0 publishes the raw mixture draws,
    // and the twist angle grows as warp_rounds * warp_twist radians per unit
    // radius.
    std::size_t warp_rounds = 1;
    double warp_twist = 3.0;
    double warp_hinge = 1.0;

    void validate() const;
    std::vector<std::vector<double>> resolved_means() const;
};

// The generative distribution behind a synthetic dataset. posterior() answers
// in *published* feature space: it inverts the warp, then applies Bayes' rule
// for the uniform-prior isotropic Gaussian mixture.
class PosteriorOracle {
public:
    PosteriorOracle(std::vector<std::vector<double>> means, double sigma,
                    FeatureWarp warp = FeatureWarp{});

    std::size_t classes() const { return means_.size(); }
    std::size_t dim() const { return means_.empty() ? 0 : means_.front().size(); }
    double sigma() const { return sigma_; }
    const std::vector<std::vector<double>>& means() const { return means_; }
    const FeatureWarp& warp() const { return warp_; }

    // softmax over -||z - mu_c||^2 / (2 sigma^2) at the latent z = unwarp(x).
    std::vector<double> posterior(std::span<const double> x) const;

    // Same, for a point already in latent space (skips the inversion).
    std::vector<double> posterior_latent(std::span<const double> z) const;

private:
    std::vector<std::vector<double>> means_;
    double sigma_;
    FeatureWarp warp_;
};

struct GeneratedData {
    Dataset train;
    Dataset val;
    Dataset test;
    PosteriorOracle oracle;
};

// Draws class-balanced-in-expectation mixture samples. Train and val carry a
// single gold label each (one simulated annotator: a draw from the exact
// posterior at the sample's latent point); test samples additionally carry an
// opinion_dist. Bit-reproducible for a fixed spec.
GeneratedData generate(const SynthSpec& spec);

// One draw from a categorical distribution given by a simplex vector.
std::size_t sample_categorical(std::span<const double> dist, Rng& rng);

// JSONL dataset files: one object per line with fields `id` (string),
// `features` (number array), `gold_label` (integer), and optional
// `opinion_dist` (number array). Round-trips are lossless at 64-bit float
// precision. Malformed records are reported with their line number; records
// must agree on the feature dimension (and on the opinion_dist length).
Dataset load_jsonl(const std::string& path);
void save_jsonl(const Dataset& dataset, const std::string& path);

}  // namespace compcal::data
