#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "s4ecg/config.hpp"
#include "s4ecg/random.hpp"
#include "s4ecg/ssm.hpp"
#include "s4ecg/tensor.hpp"

namespace s4ecg::model {

struct NamedParameter {
    std::string name;
    ad::Tensor tensor;
};

struct NamedBuffer {
    std::string name;
    std::vector<double>* values;
};

// Everything a forward pass needs besides parameters and inputs.
struct ForwardContext {
    bool training = false;
    Rng* rng = nullptr;  // required when training with dropout > 0
    double step_scale = 1.0;  // multiplies every SSM step (cross-rate inference)
    ssm::ConvMethod conv_method = ssm::ConvMethod::automatic;
};

// Seven static features: age, sex, height, weight (standardized where numeric)
// followed by the imputation flags for sex, height and weight.
struct MetaFeatures {
    static constexpr std::size_t kCount = 7;
    std::array<double, kCount> values{};
};

// H independent single-input single-output state-space systems.
struct SsmBank {
    ad::Tensor A;         // [H, N, N]
    ad::Tensor B;         // [H, N]
    ad::Tensor C;         // [H, N]
    ad::Tensor D;         // [H, 1]
    ad::Tensor log_step;  // [H]

    static SsmBank init(std::size_t channels, std::size_t state_dim, double step_min, double step_max, Rng& rng);
    SsmBank clone() const;
    // y = K̄ * u + D u for u [B, H, L].
    ad::Tensor apply(const ad::Tensor& u, const ForwardContext& ctx) const;
    ssm::ContinuousSsm channel(std::size_t h) const;
    void collect(const std::string& prefix, std::vector<NamedParameter>& out) const;
};

// norm -> SSM (per channel) -> GeLU -> dropout -> pointwise mixing -> residual add.
class S4Block {
public:
    S4Block() = default;
    S4Block(std::size_t width, std::size_t state_dim, bool bidirectional, BidirectionalMerge merge, double dropout,
            NormKind norm, double step_min, double step_max, Rng& rng);

    ad::Tensor forward(const ad::Tensor& x, const ForwardContext& ctx);
    // Per-channel SSM outputs before activation: [B, H, L], or [B, 2H, L] for the
    // bidirectional concat variant (forward channels first).
    ad::Tensor channel_outputs(const ad::Tensor& normalized, const ForwardContext& ctx) const;

    bool bidirectional() const { return m_backward.has_value(); }
    std::size_t width() const { return m_width; }
    SsmBank& forward_ssm() { return m_forward; }
    SsmBank* backward_ssm() { return m_backward ? &*m_backward : nullptr; }
    ad::Tensor& mix_weight() { return m_mix_weight; }
    ad::Tensor& mix_bias() { return m_mix_bias; }

    void collect(const std::string& prefix, std::vector<NamedParameter>& params, std::vector<NamedBuffer>& buffers);

    // Adds a time-reversed SSM pass; the backward bank starts as a copy of the
    // forward one and the mixing map grows to accept 2H inputs.
    friend S4Block make_bidirectional(const S4Block& block, BidirectionalMerge merge);

private:
    ad::Tensor normalize(const ad::Tensor& x, const ForwardContext& ctx);

    std::size_t m_width = 0;
    double m_dropout = 0.0;
    NormKind m_norm = NormKind::layer;
    BidirectionalMerge m_merge = BidirectionalMerge::concat;
    ad::Tensor m_norm_gamma, m_norm_beta;
    ad::BatchNormState m_norm_state;
    SsmBank m_forward;
    std::optional<SsmBank> m_backward;
    ad::Tensor m_mix_weight;  // [H, H or 2H, 1]
    ad::Tensor m_mix_bias;    // [H]
};

S4Block make_bidirectional(const S4Block& block, BidirectionalMerge merge = BidirectionalMerge::concat);

// Three Linear -> BatchNorm -> ReLU -> Dropout layers on the static features.
class MetaHead {
public:
    MetaHead() = default;
    MetaHead(std::size_t in_features, std::size_t hidden, std::size_t layers, double dropout, Rng& rng);

    ad::Tensor forward(const ad::Tensor& meta, const ForwardContext& ctx);
    std::size_t out_features() const { return m_hidden; }
    void collect(const std::string& prefix, std::vector<NamedParameter>& params, std::vector<NamedBuffer>& buffers);

private:
    struct Layer {
        ad::Tensor weight, bias, gamma, beta;
        ad::BatchNormState norm;
    };
    std::size_t m_hidden = 0;
    double m_dropout = 0.0;
    std::vector<Layer> m_layers;
};

// Anything that maps a batch of signals (plus optional metadata) to logits.
class Classifier {
public:
    virtual ~Classifier() = default;
    virtual std::size_t n_classes() const = 0;
    virtual std::size_t in_channels() const = 0;
    virtual bool uses_meta() const = 0;
    // True when the step size can be rescaled for a new sampling rate.
    virtual bool has_continuous_time() const = 0;
    // signal [B, C, L], meta [B, 7] or undefined -> logits [B, n_classes]
    virtual ad::Tensor logits(const ad::Tensor& signal, const ad::Tensor& meta, const ForwardContext& ctx) = 0;
};

class S4Classifier final : public Classifier {
public:
    S4Classifier(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return m_config; }
    std::size_t n_classes() const override { return m_config.n_classes; }
    std::size_t in_channels() const override { return m_config.in_channels; }
    bool uses_meta() const override { return m_config.with_meta; }
    bool has_continuous_time() const override { return !m_blocks.empty(); }

    ad::Tensor logits(const ad::Tensor& signal, const ad::Tensor& meta, const ForwardContext& ctx) override;

    // [C, L] -> [n_classes]
    ad::Tensor forward_signal(const ad::Tensor& signal, const ForwardContext& ctx);
    // [C, L] + features -> [n_classes]; ablate_meta replaces the meta embedding by zeros.
    ad::Tensor forward_with_meta(const ad::Tensor& signal, const MetaFeatures& meta, const ForwardContext& ctx,
                                 bool ablate_meta = false);

    // Encoder and S4 blocks: [B, C, L] -> [B, H, L].
    ad::Tensor sequence_features(const ad::Tensor& signal, const ForwardContext& ctx);
    ad::Tensor encode(const ad::Tensor& signal, const ForwardContext& ctx);

    std::vector<NamedParameter> parameters();
    std::vector<NamedBuffer> buffers();
    std::size_t parameter_count(const std::string& prefix = "");

    // Sets requires_grad on every parameter whose name starts with prefix
    // (respecting the config's train_* flags when enabling).
    void set_trainable(const std::string& prefix, bool trainable);

    std::vector<S4Block>& blocks() { return m_blocks; }
    ad::Tensor& classifier_weight() { return m_head_weight; }
    ad::Tensor& classifier_bias() { return m_head_bias; }

    // Reinitializes the linear classification head.
    void reset_head(std::uint64_t seed);

private:
    ad::Tensor head(const ad::Tensor& pooled, const ad::Tensor& meta, const ForwardContext& ctx, bool ablate_meta);
    void apply_trainable_flags();

    ModelConfig m_config;
    std::vector<ad::Tensor> m_encoder_weights;  // [out, in, k]
    std::vector<ad::Tensor> m_encoder_biases;
    std::vector<S4Block> m_blocks;
    std::optional<MetaHead> m_meta;
    ad::Tensor m_head_weight;  // [n_classes, H (+ meta_hidden)]
    ad::Tensor m_head_bias;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
ad::Tensor uniform_init(ad::Shape shape, std::size_t fan_in, Rng& rng);

}  // namespace s4ecg::model
