#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "compcal/matrix.hpp"
#include "compcal/netcore.hpp"
#include "compcal/rng.hpp"

namespace compcal::model {

struct ArchConfig {
    std::size_t input_dim = 16;
    std::size_t width = 64;
    std::size_t blocks = 8;
    std::size_t classes = 4;
    double dropout_rate = 0.1;
    net::Activation activation = net::Activation::kRelu;

    void validate() const;
    bool operator==(const ArchConfig&) const = default;
};

// One encoder stage: dense -> activation -> dropout. Block 1 maps the input
// dimension to the hidden width; later blocks are width -> width.
struct EncoderBlock {
    net::DenseLayer dense;
    std::size_t index = 0;  // 1-based position in the stack
};

// Internal classifier attached after a block below the top: affine -> softmax,
// architecturally identical to the main head.
struct Probe {
    net::DenseLayer head;
    std::size_t attach_after = 0;  // 1-based block index
    bool trained = false;
};

struct ForwardOptions {
    net::Mode mode = net::Mode::kEval;
    bool want_probes = false;
    Rng* dropout_rng = nullptr;                     // required in train mode when rate > 0
    std::optional<double> dropout_rate_override;    // e.g. MC-dropout rate
};

struct ForwardResult {
    std::vector<Matrix> hidden;       // post-dropout output of each block, bottom-up
    Matrix head_logits;
    Matrix head_probs;
    std::vector<Matrix> probe_logits;  // aligned with the model's probe list
    std::vector<Matrix> probe_probs;   // (empty unless want_probes)
};

// Intermediate activations recorded by a training forward pass, consumed by
// backward(). Valid for exactly one backward call.
struct Tape {
    Matrix input;
    std::vector<Matrix> pre_dropout;    // post-activation output of each block
    std::vector<Matrix> dropout_mask;   // per-entry multiplier applied by dropout
    std::vector<Matrix> hidden;         // block outputs actually fed forward
    bool valid = false;
};

// Gradient signal entering at a probe's logits, keyed by the probe's index in
// the model's probe list.
struct ProbeGrad {
    std::size_t probe_index = 0;
    Matrix d_logits;
};

class LayeredClassifier {
public:
    explicit LayeredClassifier(ArchConfig cfg);

    const ArchConfig& config() const { return cfg_; }
    std::size_t depth() const { return blocks_.size(); }
    std::size_t num_classes() const { return cfg_.classes; }
    std::size_t input_dim() const { return cfg_.input_dim; }

    // He-initializes blocks and head (probes are initialized when attached).
    void init_params(Rng& rng);

    const std::vector<EncoderBlock>& blocks() const { return blocks_; }
    std::vector<EncoderBlock>& blocks() { return blocks_; }
    const net::DenseLayer& head() const { return head_; }
    net::DenseLayer& head() { return head_; }

    // --- probes ------------------------------------------------------------
    // Attaches one fresh He-initialized probe after every block 1..depth-1.
    void attach_probes(Rng& rng);
    void attach_probe_at(std::size_t layer, Rng& rng);
    // Installs a copy of an already-trained probe (e.g. a distillation teacher).
    void attach_probe_copy(const Probe& probe);
    void remove_probes();
    bool has_probe_at(std::size_t layer) const;
    const Probe& probe_at(std::size_t layer) const;
    Probe& probe_at(std::size_t layer);
    const std::vector<Probe>& probes() const { return probes_; }
    std::vector<Probe>& probes() { return probes_; }

    // --- freeze masks ------------------------------------------------------
    // Trainability flags; freezing zeroes the affected gradient buffers once
    // so they stay zero for the duration of the freeze.
    void freeze_through(std::size_t source_layer);  // blocks 1..source
    void freeze_backbone_and_head();                // everything except probes
    void set_block_trainable(std::size_t layer, bool trainable);
    void set_head_trainable(bool trainable);
    void set_probe_trainable(std::size_t layer, bool trainable);
    void unfreeze_all();
    bool block_trainable(std::size_t layer) const;
    bool head_trainable() const { return head_trainable_; }
    bool probe_trainable(std::size_t layer) const;
    std::vector<bool> freeze_mask() const;  // blocks bottom-up, then head, then probes

    // --- forward / backward ------------------------------------------------
    ForwardResult forward(const Matrix& x, const ForwardOptions& opts, Tape* tape = nullptr) const;

    // Convenience: eval-mode head distribution.
    Matrix predict(const Matrix& x) const;

    // Backpropagates d_head_logits (and any probe-logit gradients) through the
    // recorded tape, accumulating gradients of trainable parameters only.
    // Gradient buffers of frozen parameters are untouched. Consumes the tape.
    void backward(Tape& tape, const Matrix& d_head_logits, const std::vector<ProbeGrad>& probe_grads = {});

    // Zeroes the gradient buffers of all trainable parameters.
    void zero_grad();

    // Parameter views of all trainable tensors, in a fixed order (blocks
    // bottom-up, head, probes bottom-up; weights before bias).
    std::vector<net::ParamView> trainable_params();

    std::size_t param_count() const;

    // Blocks 1..target plus a head: for target < depth the retained probe at
    // `target` becomes the new head; for target == depth the original head is
    // kept. All probes are removed. Retained weights are copied bit-exactly;
    // *this is left unmodified. The result is unfrozen.
    LayeredClassifier prune_above(std::size_t target) const;

private:
    void check_layer_index(std::size_t layer) const;
    std::size_t block_in_dim(std::size_t block_pos) const;  // 0-based position

    ArchConfig cfg_;
    std::vector<EncoderBlock> blocks_;
    net::DenseLayer head_;
    std::vector<Probe> probes_;
    std::vector<bool> block_trainable_;
    bool head_trainable_ = true;
    std::vector<bool> probe_trainable_;
};

// Exact parameter count implied by an architecture, independent of any model
// instance: blocks 1..depth plus one head, no probes.
std::size_t arch_param_count(const ArchConfig& cfg, std::size_t depth);

}  // namespace compcal::model
