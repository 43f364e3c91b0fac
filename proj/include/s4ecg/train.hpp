#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "s4ecg/config.hpp"
#include "s4ecg/data.hpp"
#include "s4ecg/eval.hpp"
#include "s4ecg/model.hpp"

namespace s4ecg::train {

class TrainError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamWOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;

    static AdamWOptions from(const TrainConfig& config);
};

// Decoupled weight decay: θ ← θ − lr (m̂ / (√v̂ + ε) + wd θ).
class AdamW {
public:
    AdamW(std::vector<model::NamedParameter> params, AdamWOptions options);

    // Applies one update from the accumulated gradients; throws on a non-finite
    // gradient naming the parameter, before touching any value.
    void step();
    void zero_grad();
    std::size_t steps() const { return m_t; }
    const std::vector<model::NamedParameter>& parameters() const { return m_params; }

private:
    std::vector<model::NamedParameter> m_params;
    AdamWOptions m_options;
    std::vector<std::vector<double>> m_m, m_v;
    std::size_t m_t = 0;
};

// Mean over all entries of the softplus form of binary cross-entropy.
// logits and targets share a shape; targets must be 0 or 1.
ad::Tensor bce_with_logits(const ad::Tensor& logits, const ad::Tensor& targets);

// Parameter and buffer values keyed by name.
struct ModelState {
    std::map<std::string, std::vector<double>> values;
    std::map<std::string, ad::Shape> shapes;
};

ModelState snapshot(model::S4Classifier& m);
// Throws TrainError when names or shapes disagree (architecture mismatch).
void restore(model::S4Classifier& m, const ModelState& state, const std::string& prefix = "");

// Everything the loops need besides the model: record selection and metadata statistics.
struct DataView {
    const data::Dataset* dataset = nullptr;
    std::vector<std::size_t> train;
    std::vector<std::size_t> validation;
    std::optional<data::MetadataStats> meta_stats;  // required for models with a meta head

    // Folds 1-8 train, 9 validates; metadata statistics fit on the training folds.
    static DataView standard(const data::Dataset& dataset, bool with_meta);
};

struct Batch {
    ad::Tensor signal;   // [B, C, w]
    ad::Tensor meta;     // [B, 7] or undefined
    ad::Tensor targets;  // [B, n_classes]
};

Batch make_batch(const data::Dataset& dataset, const std::vector<std::size_t>& records, double window_seconds,
                 const std::optional<data::MetadataStats>& meta, Rng& rng);

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_macro_auc = 0.0;  // NaN when not evaluated
    double wall_time = 0.0;      // seconds since training started
};

struct TrainResult {
    std::vector<EpochMetrics> log;
    std::optional<ModelState> best;  // best validation macro AUC
    std::size_t best_epoch = 0;
    double best_val_auc = 0.0;
};

struct TrainHooks {
    std::function<void(const EpochMetrics&)> on_epoch;
    // Subset of parameter names to update; all trainable parameters when empty.
    std::string parameter_prefix;
};

// Shuffled epochs of random crops with AdamW; validation after every epoch per
// config.validation. Epoch e shuffles with make_rng(seed, {1, e}).
TrainResult train_supervised(model::S4Classifier& m, const DataView& view, const TrainConfig& config,
                             const TrainHooks& hooks = {});

struct PredictOptions {
    double window_seconds = 2.5;
    std::size_t n_crops = 10;
    double step_scale = 1.0;
    std::size_t batch_records = 4;
};

// Mean of the per-crop sigmoid probabilities over the TTA crops.
std::vector<double> predict_tta(model::Classifier& m, const data::SignalRecord& record,
                                const std::optional<model::MetaFeatures>& meta, const PredictOptions& options);

eval::PredictionSet predict_dataset(model::Classifier& m, const data::Dataset& dataset,
                                    const std::vector<std::size_t>& records,
                                    const std::optional<data::MetadataStats>& meta, const PredictOptions& options);

void write_metrics_log(const std::filesystem::path& path, const std::vector<EpochMetrics>& log);
std::vector<EpochMetrics> read_metrics_log(const std::filesystem::path& path);

}  // namespace s4ecg::train
