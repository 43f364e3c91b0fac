#include "s4ecg/experiments.hpp"

#include <algorithm>

#include "s4ecg/ssm.hpp"

namespace s4ecg::experiments {

std::vector<RateResult> cross_rate_eval(model::Classifier& m, double train_rate, const std::vector<RateSet>& sets,
                                        const train::PredictOptions& options) {
    if (!m.has_continuous_time()) throw ExperimentError("model has no continuous-time parameters to rescale");
    std::vector<RateResult> out;
    for (const auto& set : sets) {
        if (set.dataset == nullptr || set.records.empty()) throw ExperimentError("empty test set");
        const double rate = set.dataset->records.at(set.records.front()).fs;
        for (std::size_t i : set.records) {
            const auto& r = set.dataset->records.at(i);
            if (r.fs != rate) {
                throw ExperimentError("record " + r.id + " is sampled at " + std::to_string(r.fs) + " Hz, expected " +
                                      std::to_string(rate) + " Hz");
            }
        }
        RateResult result;
        result.test_rate = rate;
        result.step_scale = ssm::rescale_step(1.0, train_rate, rate);
        train::PredictOptions opts = options;
        opts.step_scale = result.step_scale;
        result.predictions = train::predict_dataset(m, *set.dataset, set.records, set.meta, opts);
        result.macro_auc = eval::macro_auc(result.predictions).macro;
        out.push_back(std::move(result));
    }
    return out;
}

std::vector<SweepPoint> input_size_sweep(const ModelConfig& model_config, const TrainConfig& train_config,
                                         const std::vector<double>& windows, const train::DataView& view,
                                         const std::vector<std::size_t>& test, std::uint64_t model_seed) {
    if (view.dataset == nullptr || test.empty()) throw ExperimentError("input size sweep needs a test set");
    double longest = 0.0;
    for (const auto& r : view.dataset->records) longest = std::max(longest, static_cast<double>(r.length) / r.fs);
    std::vector<SweepPoint> curve;
    for (double w : windows) {
        if (w <= 0.0) throw ExperimentError("window must be positive");
        if (w > longest + 1e-9) {
            throw ExperimentError("window " + std::to_string(w) + " s is longer than every record (" +
                                  std::to_string(longest) + " s)");
        }
        TrainConfig tc = train_config;
        tc.crop_seconds = w;
        model::S4Classifier m(model_config, model_seed);
        const auto result = train::train_supervised(m, view, tc);
        if (result.best) train::restore(m, *result.best);
        train::PredictOptions opts;
        opts.window_seconds = w;
        opts.n_crops = tc.tta_crops;
        SweepPoint p;
        p.window_seconds = w;
        p.best_epoch = result.best_epoch;
        p.macro_auc = eval::macro_auc(train::predict_dataset(m, *view.dataset, test, view.meta_stats, opts)).macro;
        curve.push_back(p);
    }
    return curve;
}

}  // namespace s4ecg::experiments
