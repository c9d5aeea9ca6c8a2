#include "compcal/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace compcal::model {

void ArchConfig::validate() const {
    if (input_dim < 1) throw std::invalid_argument("ArchConfig: input_dim must be >= 1");
    if (width < 1) throw std::invalid_argument("ArchConfig: width must be >= 1");
    if (classes < 2) throw std::invalid_argument("ArchConfig: classes must be >= 2");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw std::invalid_argument("ArchConfig: dropout_rate must lie in [0, 1)");
    }
}

LayeredClassifier::LayeredClassifier(ArchConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    blocks_.reserve(cfg_.blocks);
    for (std::size_t i = 0; i < cfg_.blocks; ++i) {
        EncoderBlock block;
        block.dense = net::DenseLayer(block_in_dim(i), cfg_.width);
        block.index = i + 1;
        blocks_.push_back(std::move(block));
    }
    const std::size_t head_in = cfg_.blocks == 0 ? cfg_.input_dim : cfg_.width;
    head_ = net::DenseLayer(head_in, cfg_.classes);
    block_trainable_.assign(blocks_.size(), true);
}

std::size_t LayeredClassifier::block_in_dim(std::size_t block_pos) const {
    return block_pos == 0 ? cfg_.input_dim : cfg_.width;
}

void LayeredClassifier::init_params(Rng& rng) {
    for (EncoderBlock& b : blocks_) b.dense.init_he(rng);
    head_.init_he(rng);
}

void LayeredClassifier::check_layer_index(std::size_t layer) const {
    if (layer < 1 || layer > depth()) {
        throw std::out_of_range("layer index " + std::to_string(layer) + " outside 1.." +
                                std::to_string(depth()));
    }
}

void LayeredClassifier::attach_probes(Rng& rng) {
    for (std::size_t layer = 1; layer + 1 <= depth(); ++layer) attach_probe_at(layer, rng);
}

void LayeredClassifier::attach_probe_at(std::size_t layer, Rng& rng) {
    check_layer_index(layer);
    if (layer == depth()) {
        throw std::invalid_argument("probes attach strictly below the top layer (depth " +
                                    std::to_string(depth()) + ")");
    }
    if (has_probe_at(layer)) {
        throw std::invalid_argument("probe already attached at layer " + std::to_string(layer));
    }
    Probe p;
    p.head = net::DenseLayer(cfg_.width, cfg_.classes);
    p.head.init_he(rng);
    p.attach_after = layer;
    p.trained = false;
    const auto pos = std::lower_bound(probes_.begin(), probes_.end(), layer,
                                      [](const Probe& a, std::size_t l) { return a.attach_after < l; });
    const std::size_t idx = static_cast<std::size_t>(pos - probes_.begin());
    probes_.insert(pos, std::move(p));
    probe_trainable_.insert(probe_trainable_.begin() + static_cast<std::ptrdiff_t>(idx), true);
}

void LayeredClassifier::attach_probe_copy(const Probe& probe) {
    if (probe.attach_after < 1 || probe.attach_after >= depth()) {
        throw std::invalid_argument("probe attach point " + std::to_string(probe.attach_after) +
                                    " invalid for depth " + std::to_string(depth()));
    }
    if (probe.head.in_dim() != cfg_.width || probe.head.out_dim() != cfg_.classes) {
        throw std::invalid_argument("probe head " + probe.head.weights.shape_str() +
                                    " does not match architecture");
    }
    if (has_probe_at(probe.attach_after)) {
        throw std::invalid_argument("probe already attached at layer " + std::to_string(probe.attach_after));
    }
    Probe p = probe;
    p.head.zero_grad();
    const auto pos = std::lower_bound(probes_.begin(), probes_.end(), p.attach_after,
                                      [](const Probe& a, std::size_t l) { return a.attach_after < l; });
    const std::size_t idx = static_cast<std::size_t>(pos - probes_.begin());
    probes_.insert(pos, std::move(p));
    // Installed copies serve as fixed teachers; leave them frozen.
    probe_trainable_.insert(probe_trainable_.begin() + static_cast<std::ptrdiff_t>(idx), false);
}

void LayeredClassifier::remove_probes() {
    probes_.clear();
    probe_trainable_.clear();
}

bool LayeredClassifier::has_probe_at(std::size_t layer) const {
    return std::any_of(probes_.begin(), probes_.end(),
                       [layer](const Probe& p) { return p.attach_after == layer; });
}

const Probe& LayeredClassifier::probe_at(std::size_t layer) const {
    for (const Probe& p : probes_) {
        if (p.attach_after == layer) return p;
    }
    throw std::out_of_range("no probe attached at layer " + std::to_string(layer));
}

Probe& LayeredClassifier::probe_at(std::size_t layer) {
    for (Probe& p : probes_) {
        if (p.attach_after == layer) return p;
    }
    throw std::out_of_range("no probe attached at layer " + std::to_string(layer));
}

void LayeredClassifier::freeze_through(std::size_t source_layer) {
    if (source_layer < 1 || source_layer >= depth()) {
        throw std::invalid_argument("freeze_through: layer " + std::to_string(source_layer) +
                                    " must lie in 1.." + std::to_string(depth() == 0 ? 0 : depth() - 1));
    }
    for (std::size_t i = 0; i < source_layer; ++i) {
        block_trainable_[i] = false;
        blocks_[i].dense.zero_grad();
    }
}

void LayeredClassifier::freeze_backbone_and_head() {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        block_trainable_[i] = false;
        blocks_[i].dense.zero_grad();
    }
    head_trainable_ = false;
    head_.zero_grad();
}

void LayeredClassifier::set_block_trainable(std::size_t layer, bool trainable) {
    check_layer_index(layer);
    block_trainable_[layer - 1] = trainable;
    if (!trainable) blocks_[layer - 1].dense.zero_grad();
}

void LayeredClassifier::set_head_trainable(bool trainable) {
    head_trainable_ = trainable;
    if (!trainable) head_.zero_grad();
}

void LayeredClassifier::set_probe_trainable(std::size_t layer, bool trainable) {
    for (std::size_t i = 0; i < probes_.size(); ++i) {
        if (probes_[i].attach_after == layer) {
            probe_trainable_[i] = trainable;
            if (!trainable) probes_[i].head.zero_grad();
            return;
        }
    }
    throw std::out_of_range("no probe attached at layer " + std::to_string(layer));
}

void LayeredClassifier::unfreeze_all() {
    std::fill(block_trainable_.begin(), block_trainable_.end(), true);
    head_trainable_ = true;
    std::fill(probe_trainable_.begin(), probe_trainable_.end(), true);
}

bool LayeredClassifier::block_trainable(std::size_t layer) const {
    check_layer_index(layer);
    return block_trainable_[layer - 1];
}

bool LayeredClassifier::probe_trainable(std::size_t layer) const {
    for (std::size_t i = 0; i < probes_.size(); ++i) {
        if (probes_[i].attach_after == layer) return probe_trainable_[i];
    }
    throw std::out_of_range("no probe attached at layer " + std::to_string(layer));
}

std::vector<bool> LayeredClassifier::freeze_mask() const {
    std::vector<bool> mask(block_trainable_.begin(), block_trainable_.end());
    mask.push_back(head_trainable_);
    mask.insert(mask.end(), probe_trainable_.begin(), probe_trainable_.end());
    return mask;
}

ForwardResult LayeredClassifier::forward(const Matrix& x, const ForwardOptions& opts, Tape* tape) const {
    if (x.cols() != cfg_.input_dim) {
        throw std::invalid_argument("forward: input " + x.shape_str() + " does not match input_dim " +
                                    std::to_string(cfg_.input_dim));
    }
    const double rate = opts.dropout_rate_override.value_or(cfg_.dropout_rate);
    const bool stochastic = opts.mode == net::Mode::kTrain && rate > 0.0;
    if (stochastic && opts.dropout_rng == nullptr) {
        throw std::invalid_argument("forward: train-mode dropout requires a dropout_rng");
    }

    ForwardResult out;
    out.hidden.reserve(depth());
    if (tape) {
        *tape = Tape{};
        tape->input = x;
        tape->pre_dropout.reserve(depth());
        tape->dropout_mask.reserve(depth());
        tape->hidden.reserve(depth());
    }

    const Matrix* current = &x;
    for (const EncoderBlock& block : blocks_) {
        Matrix h = net::affine_forward(*current, block.dense);
        net::activate(h, cfg_.activation);
        Matrix mask;
        Matrix dropped = stochastic
                             ? net::dropout_forward(h, rate, net::Mode::kTrain, *opts.dropout_rng,
                                                    tape ? &mask : nullptr)
                             : h;
        if (tape) {
            if (!stochastic) mask = Matrix(h.rows(), h.cols(), 1.0);
            tape->pre_dropout.push_back(std::move(h));
            tape->dropout_mask.push_back(std::move(mask));
            tape->hidden.push_back(dropped);
        }
        out.hidden.push_back(std::move(dropped));
        current = &out.hidden.back();
    }

    out.head_logits = net::affine_forward(*current, head_);
    out.head_probs = net::softmax_rows(out.head_logits);

    if (opts.want_probes) {
        out.probe_logits.reserve(probes_.size());
        out.probe_probs.reserve(probes_.size());
        for (const Probe& p : probes_) {
            Matrix logits = net::affine_forward(out.hidden[p.attach_after - 1], p.head);
            out.probe_probs.push_back(net::softmax_rows(logits));
            out.probe_logits.push_back(std::move(logits));
        }
    }

    if (tape) tape->valid = true;
    return out;
}

Matrix LayeredClassifier::predict(const Matrix& x) const {
    return forward(x, ForwardOptions{}).head_probs;
}

namespace {

void add_into(Matrix& acc, Matrix&& contribution) {
    if (acc.empty()) {
        acc = std::move(contribution);
        return;
    }
    for (std::size_t i = 0; i < acc.size(); ++i) acc.storage()[i] += contribution.storage()[i];
}

}  // namespace

void LayeredClassifier::backward(Tape& tape, const Matrix& d_head_logits,
                                 const std::vector<ProbeGrad>& probe_grads) {
    if (!tape.valid) throw std::runtime_error("backward called without a recorded forward pass");
    tape.valid = false;
    const std::size_t batch = tape.input.rows();
    if (d_head_logits.rows() != batch || d_head_logits.cols() != cfg_.classes) {
        throw std::invalid_argument("backward: head gradient " + d_head_logits.shape_str() +
                                    " does not match batch " + std::to_string(batch) + " x " +
                                    std::to_string(cfg_.classes));
    }

    // Lowest block whose parameters still need gradients; backprop stops there.
    std::size_t lowest_trainable = 0;  // 1-based; 0 = none
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        if (block_trainable_[i]) {
            lowest_trainable = i + 1;
            break;
        }
    }

    std::vector<Matrix> d_hidden(depth());
    const Matrix& top_input = depth() == 0 ? tape.input : tape.hidden.back();
    Matrix d_top = net::affine_backward(top_input, d_head_logits, head_, head_trainable_);
    if (depth() > 0 && lowest_trainable != 0) add_into(d_hidden[depth() - 1], std::move(d_top));

    for (const ProbeGrad& pg : probe_grads) {
        if (pg.probe_index >= probes_.size()) {
            throw std::out_of_range("backward: probe index " + std::to_string(pg.probe_index) +
                                    " out of range");
        }
        Probe& p = probes_[pg.probe_index];
        Matrix d_in = net::affine_backward(tape.hidden[p.attach_after - 1], pg.d_logits, p.head,
                                           probe_trainable_[pg.probe_index]);
        if (lowest_trainable != 0 && p.attach_after >= lowest_trainable) {
            add_into(d_hidden[p.attach_after - 1], std::move(d_in));
        }
    }

    if (lowest_trainable == 0) return;

    for (std::size_t layer = depth(); layer >= lowest_trainable; --layer) {
        Matrix& d_h = d_hidden[layer - 1];
        if (d_h.empty()) d_h = Matrix(batch, cfg_.width);
        // Undo dropout, then the activation, then the affine map.
        for (std::size_t i = 0; i < d_h.size(); ++i) {
            d_h.storage()[i] *= tape.dropout_mask[layer - 1].storage()[i];
        }
        net::activate_backward(tape.pre_dropout[layer - 1], d_h, cfg_.activation);
        const Matrix& block_input = layer == 1 ? tape.input : tape.hidden[layer - 2];
        Matrix d_x = net::affine_backward(block_input, d_h, blocks_[layer - 1].dense,
                                          block_trainable_[layer - 1]);
        if (layer > lowest_trainable) add_into(d_hidden[layer - 2], std::move(d_x));
    }
}

void LayeredClassifier::zero_grad() {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        if (block_trainable_[i]) blocks_[i].dense.zero_grad();
    }
    if (head_trainable_) head_.zero_grad();
    for (std::size_t i = 0; i < probes_.size(); ++i) {
        if (probe_trainable_[i]) probes_[i].head.zero_grad();
    }
}

std::vector<net::ParamView> LayeredClassifier::trainable_params() {
    std::vector<net::ParamView> views;
    auto push_layer = [&views](net::DenseLayer& layer) {
        views.push_back({layer.weights.data(), layer.grad_weights.data(), layer.weights.size()});
        views.push_back({layer.bias.data(), layer.grad_bias.data(), layer.bias.size()});
    };
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        if (block_trainable_[i]) push_layer(blocks_[i].dense);
    }
    if (head_trainable_) push_layer(head_);
    for (std::size_t i = 0; i < probes_.size(); ++i) {
        if (probe_trainable_[i]) push_layer(probes_[i].head);
    }
    return views;
}

std::size_t LayeredClassifier::param_count() const {
    std::size_t count = 0;
    for (const EncoderBlock& b : blocks_) count += b.dense.param_count();
    count += head_.param_count();
    for (const Probe& p : probes_) count += p.head.param_count();
    return count;
}

LayeredClassifier LayeredClassifier::prune_above(std::size_t target) const {
    check_layer_index(target);
    const Probe* new_head = nullptr;
    if (target < depth()) {
        if (!has_probe_at(target)) {
            throw std::invalid_argument("prune_above: no probe attached at target layer " +
                                        std::to_string(target));
        }
        const Probe& p = probe_at(target);
        if (!p.trained) {
            throw std::invalid_argument("prune_above: probe at layer " + std::to_string(target) +
                                        " is untrained");
        }
        new_head = &p;
    }

    ArchConfig cfg = cfg_;
    cfg.blocks = target;
    LayeredClassifier pruned(cfg);
    for (std::size_t i = 0; i < target; ++i) {
        pruned.blocks_[i].dense = blocks_[i].dense;
        pruned.blocks_[i].dense.zero_grad();
    }
    pruned.head_ = new_head ? new_head->head : head_;
    pruned.head_.zero_grad();
    return pruned;
}

std::size_t arch_param_count(const ArchConfig& cfg, std::size_t depth) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < depth; ++i) {
        const std::size_t in = i == 0 ? cfg.input_dim : cfg.width;
        count += in * cfg.width + cfg.width;
    }
    const std::size_t head_in = depth == 0 ? cfg.input_dim : cfg.width;
    count += head_in * cfg.classes + cfg.classes;
    return count;
}

}  // namespace compcal::model
