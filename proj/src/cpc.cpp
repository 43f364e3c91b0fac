#include "s4ecg/cpc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace s4ecg::cpc {

namespace {

// n distinct values from [0, m), Floyd's algorithm.
std::vector<std::size_t> sample_distinct(std::size_t m, std::size_t n, Rng& rng) {
    std::vector<std::size_t> out;
    out.reserve(n);
    for (std::size_t j = m - n; j < m; ++j) {
        const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
        out.push_back(std::find(out.begin(), out.end(), t) == out.end() ? t : j);
    }
    return out;
}

std::string sz(std::size_t v) { return std::to_string(v); }

}  // namespace

ContrastivePairs sample_contrastive_pairs(std::size_t batch, std::size_t length, std::size_t k, std::size_t n_neg,
                                          std::size_t max_anchors, bool cross_batch, Rng& rng) {
    if (k == 0) throw CpcError("forecast offset must be at least 1");
    if (length <= k) throw CpcError("sequence length " + sz(length) + " does not exceed forecast offset " + sz(k));
    if (n_neg == 0) throw CpcError("at least one negative is required");
    const std::size_t pool = cross_batch ? batch * length - 1 : length - 1;
    if (n_neg >= pool) {
        throw CpcError(sz(n_neg) + " negatives requested but only " + sz(pool) + " positions besides the positive");
    }
    if (max_anchors == 0) throw CpcError("max_anchors must be positive");

    ContrastivePairs pairs;
    pairs.n_candidates = n_neg + 1;
    const std::size_t valid = length - k;
    for (std::size_t b = 0; b < batch; ++b) {
        std::vector<std::size_t> ts;
        if (valid <= max_anchors) {
            ts.resize(valid);
            for (std::size_t t = 0; t < valid; ++t) ts[t] = t;
        } else {
            ts = sample_distinct(valid, max_anchors, rng);
            std::sort(ts.begin(), ts.end());
        }
        for (std::size_t t : ts) {
            const std::size_t positive = b * length + t + k;
            pairs.anchors.push_back(b * length + t);
            pairs.candidates.push_back(positive);
            const std::size_t base = cross_batch ? 0 : b * length;
            for (std::size_t j : sample_distinct(pool, n_neg, rng)) {
                const std::size_t flat = base + j;
                pairs.candidates.push_back(flat >= positive ? flat + 1 : flat);
            }
        }
    }
    return pairs;
}

ad::Tensor gather_positions(const ad::Tensor& x, const std::vector<std::size_t>& positions) {
    if (x.rank() != 3) throw ad::DimensionError("gather_positions expects [B, D, L], got " + ad::to_string(x.shape()));
    const std::size_t D = x.dim(1), L = x.dim(2), total = x.dim(0) * L, P = positions.size();
    for (std::size_t p : positions)
        if (p >= total) throw CpcError("position " + sz(p) + " out of range for " + ad::to_string(x.shape()));
    const auto xv = x.values();
    std::vector<double> out(P * D);
    for (std::size_t r = 0; r < P; ++r) {
        const std::size_t base = positions[r] / L * D * L + positions[r] % L;
        for (std::size_t d = 0; d < D; ++d) out[r * D + d] = xv[base + d * L];
    }
    return ad::make_result({P, D}, std::move(out), {x}, "gather_positions", [positions, D, L](ad::Node& self) {
        ad::Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        ad::ensure_grad(in);
        for (std::size_t r = 0; r < positions.size(); ++r) {
            const std::size_t base = positions[r] / L * D * L + positions[r] % L;
            for (std::size_t d = 0; d < D; ++d) in.grad[base + d * L] += self.grad[r * D + d];
        }
    });
}

ad::Tensor contrastive_scores(const ad::Tensor& z, const ad::Tensor& prediction, const ContrastivePairs& pairs) {
    const std::size_t A = pairs.anchors.size(), n = pairs.n_candidates;
    if (z.rank() != 3 || prediction.rank() != 2 || prediction.dim(0) != A || prediction.dim(1) != z.dim(1)) {
        throw ad::DimensionError("contrastive_scores: z " + ad::to_string(z.shape()) + ", prediction " +
                                 ad::to_string(prediction.shape()) + ", " + sz(A) + " anchors");
    }
    if (pairs.candidates.size() != A * n) throw CpcError("candidate list does not match anchors");
    const std::size_t D = z.dim(1), L = z.dim(2), positions = z.dim(0) * L;
    for (std::size_t p : pairs.candidates)
        if (p >= positions) throw CpcError("candidate index out of range");
    // Element d of flat position p = b * L + t lives at (b * D + d) * L + t.
    auto offset = [D, L](std::size_t p, std::size_t d) { return ((p / L) * D + d) * L + p % L; };

    const auto zv = z.values();
    const auto pv = prediction.values();
    std::vector<double> scores(A * n);
    for (std::size_t a = 0; a < A; ++a) {
        for (std::size_t c = 0; c < n; ++c) {
            double s = 0.0;
            for (std::size_t d = 0; d < D; ++d) s += zv[offset(pairs.candidates[a * n + c], d)] * pv[a * D + d];
            scores[a * n + c] = s;
        }
    }
    return ad::make_result({A, n}, std::move(scores), {z, prediction}, "contrastive_scores",
                           [candidates = pairs.candidates, offset, D, A, n](ad::Node& self) {
                               ad::Node& zn = *self.inputs[0];
                               ad::Node& pn = *self.inputs[1];
                               if (zn.requires_grad) ad::ensure_grad(zn);
                               if (pn.requires_grad) ad::ensure_grad(pn);
                               for (std::size_t a = 0; a < A; ++a) {
                                   for (std::size_t c = 0; c < n; ++c) {
                                       const double g = self.grad[a * n + c];
                                       if (g == 0.0) continue;
                                       const std::size_t cand = candidates[a * n + c];
                                       for (std::size_t d = 0; d < D; ++d) {
                                           const std::size_t zi = offset(cand, d), pi = a * D + d;
                                           if (zn.requires_grad) zn.grad[zi] += g * pn.value[pi];
                                           if (pn.requires_grad) pn.grad[pi] += g * zn.value[zi];
                                       }
                                   }
                               }
                           });
}

ad::Tensor infonce_from_scores(const ad::Tensor& scores) {
    if (scores.rank() != 2 || scores.dim(0) == 0 || scores.dim(1) < 2) {
        throw ad::DimensionError("InfoNCE expects scores [anchors, 1 + negatives], got " + ad::to_string(scores.shape()));
    }
    return ad::mean(ad::logsumexp(scores) - ad::select_last(scores, 0));
}

ForecastHeads::ForecastHeads(std::size_t horizon, std::size_t width, std::size_t hidden, Rng& rng) {
    for (std::size_t k = 0; k < horizon; ++k) {
        Mlp mlp;
        mlp.w1 = model::uniform_init({hidden, width}, width, rng);
        mlp.b1 = model::uniform_init({hidden}, width, rng);
        mlp.w2 = model::uniform_init({width, hidden}, hidden, rng);
        mlp.b2 = model::uniform_init({width}, hidden, rng);
        m_layers.push_back(mlp);
    }
}

ad::Tensor ForecastHeads::predict(const ad::Tensor& context, std::size_t k) const {
    if (k == 0 || k > m_layers.size()) throw CpcError("forecast offset " + sz(k) + " outside 1.." + sz(m_layers.size()));
    const Mlp& mlp = m_layers[k - 1];
    return ad::linear(ad::relu(ad::linear(context, mlp.w1, mlp.b1)), mlp.w2, mlp.b2);
}

std::vector<model::NamedParameter> ForecastHeads::parameters() const {
    std::vector<model::NamedParameter> out;
    for (std::size_t k = 0; k < m_layers.size(); ++k) {
        const std::string p = "forecast." + sz(k + 1) + ".";
        out.push_back({p + "0.weight", m_layers[k].w1});
        out.push_back({p + "0.bias", m_layers[k].b1});
        out.push_back({p + "1.weight", m_layers[k].w2});
        out.push_back({p + "1.bias", m_layers[k].b2});
    }
    return out;
}

CpcModel::CpcModel(CpcConfig config, std::uint64_t seed)
    : m_config((config.validate(), config)), m_backbone(config.model_config(1), seed) {
    Rng rng = make_rng(seed, {0xc0c});
    m_heads = ForecastHeads(config.horizon, config.encoder_width, config.head_hidden, rng);
}

CpcModel::Outputs CpcModel::forward(const ad::Tensor& signal, const model::ForwardContext& ctx) {
    Outputs out;
    out.z = m_backbone.encode(signal, ctx);
    ad::Tensor x = out.z;
    for (auto& block : m_backbone.blocks()) x = block.forward(x, ctx);
    out.c = x;
    return out;
}

ad::Tensor CpcModel::loss(const Outputs& out, Rng& rng) const {
    const std::size_t B = out.z.dim(0), L = out.z.dim(2);
    if (L <= m_config.horizon) {
        throw CpcError("sequence length " + sz(L) + " does not exceed horizon " + sz(m_config.horizon));
    }
    std::vector<ad::Tensor> scores;
    for (std::size_t k = 1; k <= m_config.horizon; ++k) {
        const auto pairs = sample_contrastive_pairs(B, L, k, m_config.n_neg, m_config.max_anchors,
                                                    m_config.cross_batch_negatives, rng);
        const ad::Tensor context = gather_positions(out.c, pairs.anchors);
        scores.push_back(contrastive_scores(out.z, m_heads.predict(context, k), pairs));
    }
    return infonce_from_scores(ad::concat(scores, 0));
}

ad::Tensor CpcModel::loss(const ad::Tensor& signal, const model::ForwardContext& ctx, Rng& rng) {
    return loss(forward(signal, ctx), rng);
}

std::vector<model::NamedParameter> CpcModel::parameters() {
    std::vector<model::NamedParameter> out;
    for (auto& p : m_backbone.parameters())
        if (!p.name.starts_with("head.")) out.push_back(p);
    for (auto& p : m_heads.parameters()) out.push_back(p);
    return out;
}

checkpoint::Checkpoint CpcModel::to_checkpoint(const TrainConfig& train, std::uint64_t seed, std::size_t epoch) {
    checkpoint::Checkpoint c;
    c.kind = "cpc";
    c.model_config = m_backbone.config().to_kv();
    c.train_config = train.to_kv();
    c.cpc_config = m_config.to_kv();
    c.seed = seed;
    c.epoch = epoch;
    train::ModelState full = train::snapshot(m_backbone);
    for (auto& [name, values] : full.values) {
        if (name.starts_with("head.")) continue;
        c.state.values[name] = values;
        c.state.shapes[name] = full.shapes.at(name);
    }
    for (const auto& p : m_heads.parameters()) {
        c.extra.values[p.name].assign(p.tensor.values().begin(), p.tensor.values().end());
        c.extra.shapes[p.name] = p.tensor.shape();
    }
    return c;
}

CpcModel CpcModel::from_checkpoint(const checkpoint::Checkpoint& ckpt) {
    if (ckpt.kind != "cpc") throw checkpoint::CheckpointError("expected a cpc checkpoint, got " + ckpt.kind);
    CpcModel m(CpcConfig::from_kv(ckpt.cpc_config), ckpt.seed);
    try {
        train::restore(m.m_backbone, ckpt.state, "encoder.");
        train::restore(m.m_backbone, ckpt.state, "blocks.");
    } catch (const train::TrainError& e) {
        throw checkpoint::CheckpointError(std::string("architecture mismatch: ") + e.what());
    }
    for (auto& p : m.m_heads.parameters()) {
        const auto it = ckpt.extra.values.find(p.name);
        if (it == ckpt.extra.values.end() || it->second.size() != p.tensor.size()) {
            throw checkpoint::CheckpointError("architecture mismatch: forecast head " + p.name);
        }
        std::copy(it->second.begin(), it->second.end(), p.tensor.mutable_values().begin());
    }
    return m;
}

std::vector<PretrainEpoch> pretrain(CpcModel& m, const data::Dataset& dataset, const std::vector<std::size_t>& records,
                                    const TrainConfig& train, const std::function<void(const PretrainEpoch&)>& on_epoch) {
    train.validate();
    if (records.empty()) throw CpcError("no pretraining records");
    std::vector<model::NamedParameter> params;
    for (auto& p : m.parameters())
        if (p.tensor.requires_grad()) params.push_back(p);
    train::AdamW optimizer(params, train::AdamWOptions::from(train));
    const std::size_t channels = dataset.records.at(records.front()).channels;

    std::vector<PretrainEpoch> log;
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t epoch = 1; epoch <= train.epochs; ++epoch) {
        Rng shuffle = make_rng(train.seed, {1, epoch});
        Rng crops = make_rng(train.seed, {2, epoch});
        Rng dropout = make_rng(train.seed, {3, epoch});
        Rng pairs = make_rng(train.seed, {4, epoch});
        std::vector<std::size_t> order = records;
        std::shuffle(order.begin(), order.end(), shuffle);
        double loss_sum = 0.0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += train.batch_size) {
            const std::size_t end = std::min(order.size(), start + train.batch_size);
            std::vector<double> values;
            std::size_t width = 0;
            for (std::size_t i = start; i < end; ++i) {
                const auto& r = dataset.records.at(order[i]);
                if (r.channels != channels) throw CpcError("record " + r.id + " has " + sz(r.channels) + " channels");
                const auto crop = data::random_crop(r, m.config().crop_seconds, crops);
                if (width != 0 && crop.width != width) throw CpcError("record " + r.id + " differs in sampling rate");
                width = crop.width;
                values.insert(values.end(), crop.values.begin(), crop.values.end());
            }
            model::ForwardContext ctx;
            ctx.training = true;
            ctx.rng = &dropout;
            const ad::Tensor loss = m.loss(ad::Tensor::from({end - start, channels, width}, std::move(values)), ctx, pairs);
            optimizer.zero_grad();
            ad::backward(loss);
            optimizer.step();
            loss_sum += loss.item();
            ++n_batches;
        }
        PretrainEpoch e;
        e.epoch = epoch;
        e.loss = loss_sum / static_cast<double>(n_batches);
        e.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        log.push_back(e);
        if (on_epoch) on_epoch(e);
    }
    return log;
}

model::S4Classifier classifier_from_pretrained(const checkpoint::Checkpoint& pretrained, std::size_t n_classes,
                                               std::uint64_t seed) {
    if (pretrained.kind != "cpc") throw checkpoint::CheckpointError("expected a cpc checkpoint, got " + pretrained.kind);
    const CpcConfig cfg = CpcConfig::from_kv(pretrained.cpc_config);
    model::S4Classifier m(cfg.model_config(n_classes), seed);
    try {
        train::restore(m, pretrained.state, "encoder.");
        train::restore(m, pretrained.state, "blocks.");
    } catch (const train::TrainError& e) {
        throw checkpoint::CheckpointError(std::string("architecture mismatch: ") + e.what());
    }
    m.reset_head(seed);
    return m;
}

FinetuneResult finetune(model::S4Classifier& m, const train::DataView& view, const TrainConfig& config,
                        std::size_t head_only_epochs, std::size_t full_epochs) {
    FinetuneResult result;
    if (head_only_epochs > 0) {
        m.set_trainable("", false);
        m.set_trainable("head.", true);
        TrainConfig phase = config;
        phase.epochs = head_only_epochs;
        train::TrainHooks hooks;
        hooks.parameter_prefix = "head.";
        result.head_only = train::train_supervised(m, view, phase, hooks);
    }
    m.set_trainable("", true);
    if (full_epochs > 0) {
        TrainConfig phase = config;
        phase.epochs = full_epochs;
        phase.seed = make_rng(config.seed, {0xf11})();
        result.full = train::train_supervised(m, view, phase);
    }
    return result;
}

}  // namespace s4ecg::cpc
