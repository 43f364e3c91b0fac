#include "s4ecg/model.hpp"

#include <cmath>

namespace s4ecg::model {

namespace {

ad::Tensor clone_tensor(const ad::Tensor& t) {
    return ad::Tensor::from(t.shape(), std::vector<double>(t.values().begin(), t.values().end()), t.requires_grad());
}

void check_training_rng(const ForwardContext& ctx, double dropout) {
    if (ctx.training && dropout > 0.0 && ctx.rng == nullptr) {
        throw std::invalid_argument("training-mode forward pass with dropout needs an rng");
    }
}

}  // namespace

ad::Tensor uniform_init(ad::Shape shape, std::size_t fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(ad::numel(shape));
    for (double& v : values) v = dist(rng);
    return ad::Tensor::from(std::move(shape), std::move(values), true);
}

SsmBank SsmBank::init(std::size_t channels, std::size_t state_dim, double step_min, double step_max, Rng& rng) {
    const ssm::Matrix a = ssm::hippo_legs(state_dim);
    const ssm::Vector b = ssm::hippo_legs_input(state_dim);
    const std::size_t n = state_dim;
    std::vector<double> va(channels * n * n), vb(channels * n), vc(channels * n), vd(channels, 1.0),
        vs(channels);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> log_step(std::log(step_min), std::log(step_max));
    for (std::size_t h = 0; h < channels; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t k = 0; k < n; ++k)
                va[(h * n + i) * n + k] = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
            vb[h * n + i] = b(static_cast<Eigen::Index>(i));
            vc[h * n + i] = normal(rng);
        }
        vs[h] = log_step(rng);
    }
    SsmBank bank;
    bank.A = ad::Tensor::from({channels, n, n}, std::move(va), true);
    bank.B = ad::Tensor::from({channels, n}, std::move(vb), true);
    bank.C = ad::Tensor::from({channels, n}, std::move(vc), true);
    bank.D = ad::Tensor::from({channels, 1}, std::move(vd), true);
    bank.log_step = ad::Tensor::from({channels}, std::move(vs), true);
    return bank;
}

SsmBank SsmBank::clone() const {
    return SsmBank{clone_tensor(A), clone_tensor(B), clone_tensor(C), clone_tensor(D), clone_tensor(log_step)};
}

ad::Tensor SsmBank::apply(const ad::Tensor& u, const ForwardContext& ctx) const {
    const ad::Tensor kernel = ssm::kernel_op(A, B, C, log_step, u.dim(2), ctx.step_scale);
    return ssm::convolve_op(u, kernel, ctx.conv_method) + u * D;
}

ssm::ContinuousSsm SsmBank::channel(std::size_t h) const {
    const std::size_t n = B.dim(1);
    const auto N = static_cast<Eigen::Index>(n);
    ssm::ContinuousSsm out;
    out.A = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        A.values().data() + h * n * n, N, N);
    out.B = Eigen::Map<const ssm::Vector>(B.values().data() + h * n, N);
    out.C = Eigen::Map<const ssm::Vector>(C.values().data() + h * n, N);
    out.D = D[h];
    out.log_step = log_step[h];
    return out;
}

void SsmBank::collect(const std::string& prefix, std::vector<NamedParameter>& out) const {
    out.push_back({prefix + "A", A});
    out.push_back({prefix + "B", B});
    out.push_back({prefix + "C", C});
    out.push_back({prefix + "D", D});
    out.push_back({prefix + "log_step", log_step});
}

S4Block::S4Block(std::size_t width, std::size_t state_dim, bool bidirectional, BidirectionalMerge merge,
                 double dropout, NormKind norm, double step_min, double step_max, Rng& rng)
    : m_width(width), m_dropout(dropout), m_norm(norm), m_merge(merge) {
    m_norm_gamma = ad::Tensor::full({width}, 1.0, true);
    m_norm_beta = ad::Tensor::zeros({width}, true);
    m_forward = SsmBank::init(width, state_dim, step_min, step_max, rng);
    if (bidirectional) m_backward = SsmBank::init(width, state_dim, step_min, step_max, rng);
    const std::size_t mix_in = bidirectional && merge == BidirectionalMerge::concat ? 2 * width : width;
    m_mix_weight = uniform_init({width, mix_in, 1}, mix_in, rng);
    m_mix_bias = uniform_init({width}, mix_in, rng);
}

ad::Tensor S4Block::normalize(const ad::Tensor& x, const ForwardContext& ctx) {
    if (m_norm == NormKind::layer) return ad::layer_norm(x, m_norm_gamma, m_norm_beta);
    return ad::batch_norm(x, m_norm_gamma, m_norm_beta, m_norm_state, ctx.training);
}

ad::Tensor S4Block::channel_outputs(const ad::Tensor& normalized, const ForwardContext& ctx) const {
    ad::Tensor y = m_forward.apply(normalized, ctx);
    if (!m_backward) return y;
    const ad::Tensor reversed = ad::flip_last(m_backward->apply(ad::flip_last(normalized), ctx));
    if (m_merge == BidirectionalMerge::sum) return y + reversed;
    return ad::concat({y, reversed}, 1);
}

ad::Tensor S4Block::forward(const ad::Tensor& x, const ForwardContext& ctx) {
    if (x.rank() != 3 || x.dim(1) != m_width) {
        throw ad::DimensionError("S4 block of width " + std::to_string(m_width) + " got input " + ad::to_string(x.shape()));
    }
    check_training_rng(ctx, m_dropout);
    ad::Tensor y = ad::gelu(channel_outputs(normalize(x, ctx), ctx));
    if (ctx.training && m_dropout > 0.0) y = ad::dropout(y, m_dropout, true, *ctx.rng);
    y = ad::conv1d(y, m_mix_weight, m_mix_bias, ad::Padding::causal);
    return x + y;
}

void S4Block::collect(const std::string& prefix, std::vector<NamedParameter>& params,
                      std::vector<NamedBuffer>& buffers) {
    params.push_back({prefix + "norm.gamma", m_norm_gamma});
    params.push_back({prefix + "norm.beta", m_norm_beta});
    if (m_norm == NormKind::batch) {
        if (m_norm_state.running_mean.empty()) {
            m_norm_state.running_mean.assign(m_width, 0.0);
            m_norm_state.running_var.assign(m_width, 1.0);
        }
        buffers.push_back({prefix + "norm.running_mean", &m_norm_state.running_mean});
        buffers.push_back({prefix + "norm.running_var", &m_norm_state.running_var});
    }
    m_forward.collect(prefix + "ssm.", params);
    if (m_backward) m_backward->collect(prefix + "ssm_backward.", params);
    params.push_back({prefix + "mix.weight", m_mix_weight});
    params.push_back({prefix + "mix.bias", m_mix_bias});
}

S4Block make_bidirectional(const S4Block& block, BidirectionalMerge merge) {
    if (block.bidirectional()) return block;
    S4Block out = block;
    out.m_norm_gamma = clone_tensor(block.m_norm_gamma);
    out.m_norm_beta = clone_tensor(block.m_norm_beta);
    out.m_forward = block.m_forward.clone();
    out.m_backward = block.m_forward.clone();
    out.m_merge = merge;
    const std::size_t h = block.m_width;
    if (merge == BidirectionalMerge::concat) {
        // Both halves start from the causal block's mixing weights.
        std::vector<double> w(h * 2 * h);
        const auto src = block.m_mix_weight.values();
        for (std::size_t o = 0; o < h; ++o)
            for (std::size_t i = 0; i < h; ++i) {
                w[o * 2 * h + i] = src[o * h + i];
                w[o * 2 * h + h + i] = src[o * h + i];
            }
        out.m_mix_weight = ad::Tensor::from({h, 2 * h, 1}, std::move(w), block.m_mix_weight.requires_grad());
    } else {
        out.m_mix_weight = clone_tensor(block.m_mix_weight);
    }
    out.m_mix_bias = clone_tensor(block.m_mix_bias);
    return out;
}

MetaHead::MetaHead(std::size_t in_features, std::size_t hidden, std::size_t layers, double dropout, Rng& rng)
    : m_hidden(hidden), m_dropout(dropout) {
    std::size_t fan_in = in_features;
    for (std::size_t l = 0; l < layers; ++l) {
        Layer layer;
        layer.weight = uniform_init({hidden, fan_in}, fan_in, rng);
        layer.bias = uniform_init({hidden}, fan_in, rng);
        layer.gamma = ad::Tensor::full({hidden}, 1.0, true);
        layer.beta = ad::Tensor::zeros({hidden}, true);
        layer.norm.running_mean.assign(hidden, 0.0);
        layer.norm.running_var.assign(hidden, 1.0);
        m_layers.push_back(std::move(layer));
        fan_in = hidden;
    }
}

ad::Tensor MetaHead::forward(const ad::Tensor& meta, const ForwardContext& ctx) {
    check_training_rng(ctx, m_dropout);
    ad::Tensor h = meta;
    for (auto& layer : m_layers) {
        h = ad::linear(h, layer.weight, layer.bias);
        h = ad::batch_norm(h, layer.gamma, layer.beta, layer.norm, ctx.training);
        h = ad::relu(h);
        if (ctx.training && m_dropout > 0.0) h = ad::dropout(h, m_dropout, true, *ctx.rng);
    }
    return h;
}

void MetaHead::collect(const std::string& prefix, std::vector<NamedParameter>& params,
                       std::vector<NamedBuffer>& buffers) {
    for (std::size_t l = 0; l < m_layers.size(); ++l) {
        const std::string p = prefix + std::to_string(l) + ".";
        params.push_back({p + "weight", m_layers[l].weight});
        params.push_back({p + "bias", m_layers[l].bias});
        params.push_back({p + "norm.gamma", m_layers[l].gamma});
        params.push_back({p + "norm.beta", m_layers[l].beta});
        buffers.push_back({p + "norm.running_mean", &m_layers[l].norm.running_mean});
        buffers.push_back({p + "norm.running_var", &m_layers[l].norm.running_var});
    }
}

S4Classifier::S4Classifier(ModelConfig config, std::uint64_t seed) : m_config(std::move(config)) {
    m_config.validate();
    Rng rng = make_rng(seed, {0x5eed});
    const std::size_t h = m_config.width;
    if (m_config.encoder == EncoderKind::single_conv) {
        const std::size_t k = m_config.encoder_kernel;
        m_encoder_weights.push_back(uniform_init({h, m_config.in_channels, k}, m_config.in_channels * k, rng));
        m_encoder_biases.push_back(uniform_init({h}, m_config.in_channels * k, rng));
    } else {
        std::size_t in = m_config.in_channels;
        for (std::size_t l = 0; l < m_config.fce_layers; ++l) {
            m_encoder_weights.push_back(uniform_init({h, in, 1}, in, rng));
            m_encoder_biases.push_back(uniform_init({h}, in, rng));
            in = h;
        }
    }
    for (std::size_t d = 0; d < m_config.depth; ++d) {
        m_blocks.emplace_back(h, m_config.state_dim, !m_config.causal(), m_config.merge, m_config.dropout,
                              m_config.norm, m_config.step_min, m_config.step_max, rng);
    }
    std::size_t head_in = h;
    if (m_config.with_meta) {
        m_meta.emplace(m_config.meta_features, m_config.meta_hidden, m_config.meta_layers, m_config.dropout, rng);
        head_in += m_config.meta_hidden;
    }
    m_head_weight = uniform_init({m_config.n_classes, head_in}, head_in, rng);
    m_head_bias = ad::Tensor::zeros({m_config.n_classes}, true);
    apply_trainable_flags();
}

void S4Classifier::reset_head(std::uint64_t seed) {
    Rng rng = make_rng(seed, {0x4ead});
    const std::size_t head_in = m_head_weight.dim(1);
    m_head_weight = uniform_init({m_config.n_classes, head_in}, head_in, rng);
    m_head_bias = ad::Tensor::zeros({m_config.n_classes}, true);
}

ad::Tensor S4Classifier::encode(const ad::Tensor& signal, const ForwardContext& ctx) {
    (void)ctx;
    if (signal.rank() != 3 || signal.dim(1) != m_config.in_channels) {
        throw ad::DimensionError("expected signal [B, " + std::to_string(m_config.in_channels) + ", L], got " +
                                 ad::to_string(signal.shape()));
    }
    if (signal.dim(2) == 0) throw ad::DimensionError("signal has zero length");
    const ad::Padding padding = m_config.causal() ? ad::Padding::causal : ad::Padding::same;
    ad::Tensor x = signal;
    for (std::size_t l = 0; l < m_encoder_weights.size(); ++l) {
        x = ad::conv1d(x, m_encoder_weights[l], m_encoder_biases[l], padding);
        if (m_config.encoder == EncoderKind::fce) x = ad::relu(x);
    }
    return x;
}

ad::Tensor S4Classifier::sequence_features(const ad::Tensor& signal, const ForwardContext& ctx) {
    ad::Tensor x = encode(signal, ctx);
    for (auto& block : m_blocks) x = block.forward(x, ctx);
    return x;
}

ad::Tensor S4Classifier::head(const ad::Tensor& pooled, const ad::Tensor& meta, const ForwardContext& ctx,
                              bool ablate_meta) {
    ad::Tensor features = pooled;
    if (m_config.with_meta) {
        if (!meta.defined()) throw std::invalid_argument("model was configured with metadata but none was given");
        if (meta.rank() != 2 || meta.dim(0) != pooled.dim(0) || meta.dim(1) != m_config.meta_features) {
            throw ad::DimensionError("metadata must be [B, " + std::to_string(m_config.meta_features) + "], got " +
                                     ad::to_string(meta.shape()));
        }
        for (double v : meta.values())
            if (!std::isfinite(v)) throw std::invalid_argument("metadata contains non-finite values");
        ad::Tensor embedding = m_meta->forward(meta, ctx);
        if (ablate_meta) embedding = ad::Tensor::zeros(embedding.shape());
        features = ad::concat({pooled, embedding}, 1);
    }
    return ad::linear(features, m_head_weight, m_head_bias);
}

ad::Tensor S4Classifier::logits(const ad::Tensor& signal, const ad::Tensor& meta, const ForwardContext& ctx) {
    return head(ad::mean_pool(sequence_features(signal, ctx)), meta, ctx, false);
}

ad::Tensor S4Classifier::forward_signal(const ad::Tensor& signal, const ForwardContext& ctx) {
    if (signal.rank() != 2) throw ad::DimensionError("forward_signal expects [C, L], got " + ad::to_string(signal.shape()));
    const ad::Tensor batched = ad::reshape(signal, {1, signal.dim(0), signal.dim(1)});
    const ad::Tensor out = head(ad::mean_pool(sequence_features(batched, ctx)), ad::Tensor{}, ctx, false);
    return ad::reshape(out, {m_config.n_classes});
}

ad::Tensor S4Classifier::forward_with_meta(const ad::Tensor& signal, const MetaFeatures& meta,
                                           const ForwardContext& ctx, bool ablate_meta) {
    if (!m_config.with_meta) throw std::invalid_argument("model was built without a meta head");
    if (signal.rank() != 2) throw ad::DimensionError("forward_with_meta expects [C, L], got " + ad::to_string(signal.shape()));
    const ad::Tensor batched = ad::reshape(signal, {1, signal.dim(0), signal.dim(1)});
    const ad::Tensor m = ad::Tensor::from({1, MetaFeatures::kCount}, {meta.values.begin(), meta.values.end()});
    const ad::Tensor out = head(ad::mean_pool(sequence_features(batched, ctx)), m, ctx, ablate_meta);
    return ad::reshape(out, {m_config.n_classes});
}

std::vector<NamedParameter> S4Classifier::parameters() {
    std::vector<NamedParameter> params;
    std::vector<NamedBuffer> buffers;
    for (std::size_t l = 0; l < m_encoder_weights.size(); ++l) {
        params.push_back({"encoder." + std::to_string(l) + ".weight", m_encoder_weights[l]});
        params.push_back({"encoder." + std::to_string(l) + ".bias", m_encoder_biases[l]});
    }
    for (std::size_t d = 0; d < m_blocks.size(); ++d) m_blocks[d].collect("blocks." + std::to_string(d) + ".", params, buffers);
    if (m_meta) m_meta->collect("meta.", params, buffers);
    params.push_back({"head.weight", m_head_weight});
    params.push_back({"head.bias", m_head_bias});
    return params;
}

std::vector<NamedBuffer> S4Classifier::buffers() {
    std::vector<NamedParameter> params;
    std::vector<NamedBuffer> buffers;
    for (std::size_t d = 0; d < m_blocks.size(); ++d) m_blocks[d].collect("blocks." + std::to_string(d) + ".", params, buffers);
    if (m_meta) m_meta->collect("meta.", params, buffers);
    return buffers;
}

std::size_t S4Classifier::parameter_count(const std::string& prefix) {
    std::size_t total = 0;
    for (const auto& p : parameters())
        if (p.name.starts_with(prefix)) total += p.tensor.size();
    return total;
}

void S4Classifier::apply_trainable_flags() {
    for (auto& p : parameters()) {
        bool flag = true;
        if (p.name.ends_with(".A")) flag = m_config.train_a;
        if (p.name.ends_with(".B")) flag = m_config.train_b;
        if (p.name.ends_with(".C")) flag = m_config.train_c;
        if (p.name.ends_with(".D")) flag = m_config.train_d;
        if (p.name.ends_with(".log_step")) flag = m_config.train_step;
        if (p.tensor.requires_grad() != flag) p.tensor.set_requires_grad(flag);
    }
}

void S4Classifier::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& p : parameters()) {
        if (!p.name.starts_with(prefix)) continue;
        if (p.tensor.requires_grad() != trainable) p.tensor.set_requires_grad(trainable);
    }
    if (trainable) {
        // Respect the per-parameter flags for anything just re-enabled.
        for (auto& p : parameters()) {
            if (!p.name.starts_with(prefix)) continue;
            bool flag = true;
            if (p.name.ends_with(".A")) flag = m_config.train_a;
            if (p.name.ends_with(".B")) flag = m_config.train_b;
            if (p.name.ends_with(".C")) flag = m_config.train_c;
            if (p.name.ends_with(".D")) flag = m_config.train_d;
            if (p.name.ends_with(".log_step")) flag = m_config.train_step;
            if (!flag) p.tensor.set_requires_grad(false);
        }
    }
}

}  // namespace s4ecg::model
