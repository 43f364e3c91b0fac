#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "s4ecg/checkpoint.hpp"
#include "s4ecg/config.hpp"
#include "s4ecg/data.hpp"
#include "s4ecg/model.hpp"
#include "s4ecg/train.hpp"

namespace s4ecg::cpc {

class CpcError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Flat position indices into a [B, D, L] sequence batch (b * L + t).
struct ContrastivePairs {
    std::size_t n_candidates = 0;         // positive + negatives per anchor
    std::vector<std::size_t> anchors;     // context positions
    std::vector<std::size_t> candidates;  // anchors.size() * n_candidates, positive first
};

// Anchors t with t + k < L, at most max_anchors per sequence, and n_neg distinct
// negatives per anchor drawn uniformly from the same sequence (or the whole
// batch when cross_batch) excluding the positive.
ContrastivePairs sample_contrastive_pairs(std::size_t batch, std::size_t length, std::size_t k, std::size_t n_neg,
                                          std::size_t max_anchors, bool cross_batch, Rng& rng);

// Rows x[b, :, t] for flat positions b * L + t: [B, D, L] -> [P, D].
ad::Tensor gather_positions(const ad::Tensor& x, const std::vector<std::size_t>& positions);

// S[a, c] = <z[candidate(a, c)], prediction[a]> for z [B, D, L] and one
// prediction row per anchor, [A, D].
ad::Tensor contrastive_scores(const ad::Tensor& z, const ad::Tensor& prediction, const ContrastivePairs& pairs);

// Mean over rows of logsumexp(S) - S[:, 0].
ad::Tensor infonce_from_scores(const ad::Tensor& scores);

// One two-layer MLP per forecast offset k = 1..K, applied to context rows.
class ForecastHeads {
public:
    ForecastHeads() = default;
    ForecastHeads(std::size_t horizon, std::size_t width, std::size_t hidden, Rng& rng);

    // Context rows [A, D] -> predictions of z_{t+k}, [A, D].
    ad::Tensor predict(const ad::Tensor& context, std::size_t k) const;
    std::size_t horizon() const { return m_layers.size(); }
    std::vector<model::NamedParameter> parameters() const;

private:
    struct Mlp {
        ad::Tensor w1, b1, w2, b2;
    };
    std::vector<Mlp> m_layers;
};

// FCE encoder and causal S4 predictor (held as a causal S4 classifier whose
// linear head is unused) plus the forecast heads.
class CpcModel {
public:
    CpcModel(CpcConfig config, std::uint64_t seed);

    struct Outputs {
        ad::Tensor z;  // encoder output [B, D, L]
        ad::Tensor c;  // predictor output [B, D, L]
    };
    Outputs forward(const ad::Tensor& signal, const model::ForwardContext& ctx);
    // InfoNCE over all k = 1..K with freshly sampled pairs.
    ad::Tensor loss(const ad::Tensor& signal, const model::ForwardContext& ctx, Rng& rng);
    ad::Tensor loss(const Outputs& out, Rng& rng) const;

    const CpcConfig& config() const { return m_config; }
    model::S4Classifier& backbone() { return m_backbone; }
    ForecastHeads& heads() { return m_heads; }
    // Encoder, predictor and forecast heads; excludes the unused classifier head.
    std::vector<model::NamedParameter> parameters();

    checkpoint::Checkpoint to_checkpoint(const TrainConfig& train, std::uint64_t seed, std::size_t epoch);
    static CpcModel from_checkpoint(const checkpoint::Checkpoint& ckpt);

private:
    CpcConfig m_config;
    model::S4Classifier m_backbone;
    ForecastHeads m_heads;
};

struct PretrainEpoch {
    std::size_t epoch = 0;
    double loss = 0.0;
    double wall_time = 0.0;
};

// Random crops of config.crop_seconds from `records`, batch size, lr, epochs and
// optimizer settings from `train`. Labels are ignored.
std::vector<PretrainEpoch> pretrain(CpcModel& m, const data::Dataset& dataset, const std::vector<std::size_t>& records,
                                    const TrainConfig& train,
                                    const std::function<void(const PretrainEpoch&)>& on_epoch = {});

struct FinetuneResult {
    train::TrainResult head_only;
    train::TrainResult full;
};

// Copies encoder and predictor weights into a fresh causal classifier with a
// new linear head; phase 1 trains only the head, phase 2 everything.
model::S4Classifier classifier_from_pretrained(const checkpoint::Checkpoint& pretrained, std::size_t n_classes,
                                               std::uint64_t seed);
FinetuneResult finetune(model::S4Classifier& m, const train::DataView& view, const TrainConfig& config,
                        std::size_t head_only_epochs, std::size_t full_epochs);

}  // namespace s4ecg::cpc
