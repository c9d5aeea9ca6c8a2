#include "compcal/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "compcal/prob.hpp"

namespace compcal::net {

Activation activation_from_string(const std::string& name) {
    if (name == "relu") return Activation::kRelu;
    if (name == "identity") return Activation::kIdentity;
    if (name == "tanh") return Activation::kTanh;
    throw std::invalid_argument("unknown activation: '" + name + "' (expected relu, identity, or tanh)");
}

const char* to_string(Activation a) {
    switch (a) {
        case Activation::kRelu: return "relu";
        case Activation::kIdentity: return "identity";
        case Activation::kTanh: return "tanh";
    }
    throw std::logic_error("to_string: bad Activation value");
}

void activate(Matrix& x, Activation a) {
    switch (a) {
        case Activation::kRelu:
            for (double& v : x.storage()) v = v > 0.0 ? v : 0.0;
            break;
        case Activation::kIdentity:
            break;
        case Activation::kTanh:
            for (double& v : x.storage()) v = std::tanh(v);
            break;
    }
}

void activate_backward(const Matrix& post, Matrix& d_out, Activation a) {
    if (post.rows() != d_out.rows() || post.cols() != d_out.cols()) {
        throw std::invalid_argument("activate_backward: shape mismatch " + post.shape_str() + " vs " +
                                    d_out.shape_str());
    }
    switch (a) {
        case Activation::kRelu:
            for (std::size_t i = 0; i < post.size(); ++i) {
                if (post.storage()[i] <= 0.0) d_out.storage()[i] = 0.0;
            }
            break;
        case Activation::kIdentity:
            break;
        case Activation::kTanh:
            for (std::size_t i = 0; i < post.size(); ++i) {
                const double y = post.storage()[i];
                d_out.storage()[i] *= 1.0 - y * y;
            }
            break;
    }
}

std::vector<double> softmax(std::span<const double> logits) {
    if (logits.empty()) throw std::invalid_argument("softmax: empty logit vector");
    if (!all_finite(logits)) throw std::invalid_argument("softmax: non-finite logits");
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

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        auto row = logits.row(r);
        if (!all_finite(row)) {
            throw std::invalid_argument("softmax_rows: non-finite logits in row " + std::to_string(r));
        }
        const double mx = *std::max_element(row.begin(), row.end());
        double sum = 0.0;
        double* orow = out.data() + r * out.cols();
        for (std::size_t c = 0; c < logits.cols(); ++c) {
            orow[c] = std::exp(row[c] - mx);
            sum += orow[c];
        }
        for (std::size_t c = 0; c < logits.cols(); ++c) orow[c] /= sum;
    }
    return out;
}

double cross_entropy(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size()) {
        throw std::invalid_argument("cross_entropy: length mismatch " + std::to_string(pred.size()) +
                                    " vs " + std::to_string(target.size()));
    }
    validate_simplex(pred, "cross_entropy: pred");
    validate_simplex(target, "cross_entropy: target");
    double ce = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (target[i] == 0.0) continue;
        ce -= target[i] * std::log(std::max(pred[i], kLogEps));
    }
    return ce;
}

double cross_entropy_mean(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw std::invalid_argument("cross_entropy_mean: shape mismatch " + pred.shape_str() + " vs " +
                                    target.shape_str());
    }
    if (pred.rows() == 0) throw std::invalid_argument("cross_entropy_mean: empty batch");
    double total = 0.0;
    for (std::size_t r = 0; r < pred.rows(); ++r) total += cross_entropy(pred.row(r), target.row(r));
    return total / static_cast<double>(pred.rows());
}

Matrix softmax_ce_grad(const Matrix& probs, const Matrix& targets) {
    if (probs.rows() != targets.rows() || probs.cols() != targets.cols()) {
        throw std::invalid_argument("softmax_ce_grad: shape mismatch " + probs.shape_str() + " vs " +
                                    targets.shape_str());
    }
    if (probs.rows() == 0) throw std::invalid_argument("softmax_ce_grad: empty batch");
    Matrix g(probs.rows(), probs.cols());
    const double inv_b = 1.0 / static_cast<double>(probs.rows());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        g.storage()[i] = (probs.storage()[i] - targets.storage()[i]) * inv_b;
    }
    return g;
}

void DenseLayer::init_he(Rng& rng) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in_dim()));
    for (double& w : weights.storage()) w = std_dev * rng.normal();
    std::fill(bias.begin(), bias.end(), 0.0);
}

void DenseLayer::zero_grad() {
    grad_weights.fill(0.0);
    std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
}

Matrix affine_forward(const Matrix& x, const DenseLayer& layer) {
    if (x.cols() != layer.in_dim()) {
        throw std::invalid_argument("affine_forward: input " + x.shape_str() + " does not match weights " +
                                    layer.weights.shape_str());
    }
    Matrix out = matmul(x, layer.weights);
    add_row_vector(out, layer.bias);
    return out;
}

Matrix affine_backward(const Matrix& x, const Matrix& d_out, DenseLayer& layer, bool accumulate_params) {
    if (x.cols() != layer.in_dim() || d_out.cols() != layer.out_dim() || x.rows() != d_out.rows()) {
        throw std::invalid_argument("affine_backward: shapes " + x.shape_str() + ", " + d_out.shape_str() +
                                    " do not match weights " + layer.weights.shape_str());
    }
    if (accumulate_params) {
        const Matrix gw = matmul_transpose_a(x, d_out);
        for (std::size_t i = 0; i < gw.size(); ++i) layer.grad_weights.storage()[i] += gw.storage()[i];
        for (std::size_t r = 0; r < d_out.rows(); ++r) {
            const double* row = d_out.data() + r * d_out.cols();
            for (std::size_t c = 0; c < d_out.cols(); ++c) layer.grad_bias[c] += row[c];
        }
    }
    return matmul_transpose_b(d_out, layer.weights);
}

Matrix dropout_forward(const Matrix& x, double rate, Mode mode, Rng& rng, Matrix* mask_out) {
    if (rate < 0.0 || rate >= 1.0) {
        throw std::invalid_argument("dropout_forward: rate must lie in [0, 1), got " + std::to_string(rate));
    }
    if (mode == Mode::kEval || rate == 0.0) {
        if (mask_out) *mask_out = Matrix(x.rows(), x.cols(), 1.0);
        return x;
    }
    const double scale = 1.0 / (1.0 - rate);
    Matrix out(x.rows(), x.cols());
    Matrix mask(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = rng.uniform() < rate ? 0.0 : scale;
        mask.storage()[i] = m;
        out.storage()[i] = x.storage()[i] * m;
    }
    if (mask_out) *mask_out = std::move(mask);
    return out;
}

void adamw_update(std::span<double> p, std::span<const double> g, std::span<double> m,
                  std::span<double> v, std::size_t t, double lr, const AdamWConfig& cfg) {
    if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
        throw std::invalid_argument("adamw_update: buffer length mismatch");
    }
    if (t == 0) throw std::invalid_argument("adamw_update: step count must be 1-based");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        p[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p[i]);
    }
}

AdamW::AdamW(std::vector<ParamView> params, AdamWConfig cfg) : cfg_(cfg), params_(std::move(params)) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ParamView& pv : params_) {
        if (pv.value == nullptr || pv.grad == nullptr) {
            throw std::invalid_argument("AdamW: null parameter view");
        }
        m_.emplace_back(pv.size, 0.0);
        v_.emplace_back(pv.size, 0.0);
    }
}

void AdamW::step(double lr) {
    if (lr < 0.0) lr = cfg_.lr;
    ++step_count_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        ParamView& pv = params_[i];
        adamw_update({pv.value, pv.size}, {pv.grad, pv.size}, m_[i], v_[i], step_count_, lr, cfg_);
    }
}

double linear_decay_lr(double lr0, std::size_t t, std::size_t total_steps) {
    if (total_steps == 0) return lr0;
    return lr0 * (1.0 - static_cast<double>(t) / static_cast<double>(total_steps));
}

}  // namespace compcal::net
