#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "s4ecg/data.hpp"
#include "s4ecg/eval.hpp"
#include "s4ecg/model.hpp"
#include "s4ecg/train.hpp"

namespace s4ecg::experiments {

class ExperimentError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A test set natively sampled at one rate.
struct RateSet {
    const data::Dataset* dataset = nullptr;
    std::vector<std::size_t> records;
    std::optional<data::MetadataStats> meta;
};

struct RateResult {
    double test_rate = 0.0;
    double step_scale = 1.0;
    double macro_auc = 0.0;
    eval::PredictionSet predictions;
};

// Evaluates `m` (trained at train_rate) on every set with TTA after rescaling
// its SSM steps by train_rate / test_rate. The TTA window is given in seconds.
// Throws for models without continuous-time parameters or sets whose records
// disagree on the sampling rate; signals are never resampled.
std::vector<RateResult> cross_rate_eval(model::Classifier& m, double train_rate, const std::vector<RateSet>& sets,
                                        const train::PredictOptions& options);

struct SweepPoint {
    double window_seconds = 0.0;
    double macro_auc = 0.0;
    std::size_t best_epoch = 0;
};

// Trains one model per window (crop length = window, TTA with the same window),
// selects the best validation epoch and evaluates on `test`.
std::vector<SweepPoint> input_size_sweep(const ModelConfig& model_config, const TrainConfig& train_config,
                                         const std::vector<double>& windows, const train::DataView& view,
                                         const std::vector<std::size_t>& test, std::uint64_t model_seed);

}  // namespace s4ecg::experiments
