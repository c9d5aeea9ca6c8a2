#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "compcal/matrix.hpp"
#include "compcal/rng.hpp"

namespace compcal::net {

// ---------------------------------------------------------------------------
// Activations

enum class Activation { kRelu, kIdentity, kTanh };

Activation activation_from_string(const std::string& name);
const char* to_string(Activation a);

// Applies the activation elementwise in place.
void activate(Matrix& x, Activation a);

// Multiplies d_out (in place) by the activation derivative, evaluated from the
// *post-activation* values. Works for all supported activations: relu' is
// 1{post > 0}, tanh' is 1 - post^2, identity' is 1.
void activate_backward(const Matrix& post, Matrix& d_out, Activation a);

// ---------------------------------------------------------------------------
// Softmax and cross-entropy

// Numerically stable softmax (max subtraction) of one logit row.
std::vector<double> softmax(std::span<const double> logits);

// Row-wise softmax of a logit matrix.
Matrix softmax_rows(const Matrix& logits);

// -sum_c target_c * ln(max(pred_c, eps)). Both arguments must lie on the
// probability simplex; the target may be one-hot, smoothed, or any soft
// distribution.
double cross_entropy(std::span<const double> pred, std::span<const double> target);

// Mean cross-entropy over rows.
double cross_entropy_mean(const Matrix& pred, const Matrix& target);

// Gradient of mean cross-entropy w.r.t. the logits feeding softmax_rows:
// (probs - targets) / rows.
Matrix softmax_ce_grad(const Matrix& probs, const Matrix& targets);

// ---------------------------------------------------------------------------
// Dense layer

struct DenseLayer {
    Matrix weights;                  // in x out
    std::vector<double> bias;        // out
    Matrix grad_weights;             // same shape as weights
    std::vector<double> grad_bias;   // same shape as bias

    DenseLayer() = default;
    DenseLayer(std::size_t in, std::size_t out)
        : weights(in, out),
          bias(out, 0.0),
          grad_weights(in, out),
          grad_bias(out, 0.0) {}

    std::size_t in_dim() const { return weights.rows(); }
    std::size_t out_dim() const { return weights.cols(); }
    std::size_t param_count() const { return weights.size() + bias.size(); }

    // He-normal weights (std sqrt(2/in)), zero bias.
    void init_he(Rng& rng);
    void zero_grad();
};

// out = x.W + bias. Throws on shape mismatch, naming both shapes.
Matrix affine_forward(const Matrix& x, const DenseLayer& layer);

// Accumulates grad_weights += x^T.d_out and grad_bias += column sums of d_out
// (when accumulate_params), and returns d_x = d_out.W^T.
Matrix affine_backward(const Matrix& x, const Matrix& d_out, DenseLayer& layer,
                       bool accumulate_params = true);

// ---------------------------------------------------------------------------
// Dropout

enum class Mode { kTrain, kEval };

// Train mode draws an i.i.d. keep mask from rng and scales kept entries by
// 1/(1-rate) (inverted dropout); eval mode is the identity. When mask_out is
// given it receives the applied multiplier per entry, for use in backward.
Matrix dropout_forward(const Matrix& x, double rate, Mode mode, Rng& rng,
                       Matrix* mask_out = nullptr);

// ---------------------------------------------------------------------------
// Optimizer: Adam with decoupled weight decay

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.1;
};

// Non-owning view of one parameter tensor and its gradient buffer.
struct ParamView {
    double* value = nullptr;
    const double* grad = nullptr;
    std::size_t size = 0;
};

// One update on a single parameter array; m and v are its running moments and
// t is the 1-based step count. Weight decay is decoupled: it scales the
// parameter directly and never enters the moments.
void adamw_update(std::span<double> p, std::span<const double> g, std::span<double> m,
                  std::span<double> v, std::size_t t, double lr, const AdamWConfig& cfg);

class AdamW {
public:
    explicit AdamW(std::vector<ParamView> params, AdamWConfig cfg = {});

    // Applies one update to every registered parameter using its current
    // gradient buffer. lr overrides cfg.lr for this step (pass a scheduled
    // rate); a negative value means "use cfg.lr".
    void step(double lr = -1.0);

    std::size_t step_count() const { return step_count_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    AdamWConfig cfg_;
    std::vector<ParamView> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t step_count_ = 0;
};

// Scheduled rate for step t of total_steps: lr0 * (1 - t/total). t counts
// completed steps, so the first step runs at lr0 and the rate never reaches 0.
double linear_decay_lr(double lr0, std::size_t t, std::size_t total_steps);

}  // namespace compcal::net
