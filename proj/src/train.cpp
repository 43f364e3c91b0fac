#include "s4ecg/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace s4ecg::train {

namespace {

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// Splits indices into batches, folding a trailing single record into the
// previous batch so batch statistics always see at least two samples.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    }
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

}  // namespace

AdamWOptions AdamWOptions::from(const TrainConfig& config) {
    return {config.lr, config.beta1, config.beta2, config.eps, config.weight_decay};
}

AdamW::AdamW(std::vector<model::NamedParameter> params, AdamWOptions options)
    : m_params(std::move(params)), m_options(options) {
    for (const auto& p : m_params) {
        m_m.emplace_back(p.tensor.size(), 0.0);
        m_v.emplace_back(p.tensor.size(), 0.0);
    }
}

void AdamW::zero_grad() {
    for (auto& p : m_params) p.tensor.zero_grad();
}

void AdamW::step() {
    for (const auto& p : m_params) {
        for (double g : p.tensor.grad())
            if (!std::isfinite(g)) throw TrainError("non-finite gradient in parameter " + p.name);
    }
    ++m_t;
    const auto& o = m_options;
    const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(m_t));
    const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(m_t));
    for (std::size_t k = 0; k < m_params.size(); ++k) {
        auto values = m_params[k].tensor.mutable_values();
        const auto grad = m_params[k].tensor.grad();
        if (grad.empty()) continue;
        auto& m = m_m[k];
        auto& v = m_v[k];
        for (std::size_t i = 0; i < values.size(); ++i) {
            m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * grad[i];
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            values[i] -= o.lr * (mhat / (std::sqrt(vhat) + o.eps) + o.weight_decay * values[i]);
        }
    }
}

ad::Tensor bce_with_logits(const ad::Tensor& logits, const ad::Tensor& targets) {
    if (logits.shape() != targets.shape()) {
        throw ad::DimensionError("bce_with_logits: logits " + ad::to_string(logits.shape()) + " vs targets " +
                                 ad::to_string(targets.shape()));
    }
    std::vector<double> y(targets.values().begin(), targets.values().end());
    for (double t : y)
        if (t != 0.0 && t != 1.0) throw TrainError("bce_with_logits: target " + format_number(t) + " outside {0, 1}");
    const auto x = logits.values();
    const std::size_t n = x.size();
    if (n == 0) throw ad::DimensionError("bce_with_logits on an empty tensor");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += y[i] * softplus(-x[i]) + (1.0 - y[i]) * softplus(x[i]);
    return ad::make_result({}, {total / static_cast<double>(n)}, {logits}, "bce_with_logits",
                           [y = std::move(y), n](ad::Node& self) {
                               ad::Node& in = *self.inputs[0];
                               if (!in.requires_grad) return;
                               ad::ensure_grad(in);
                               const double g = self.grad[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i) in.grad[i] += g * (sigmoid(in.value[i]) - y[i]);
                           });
}

ModelState snapshot(model::S4Classifier& m) {
    ModelState s;
    for (const auto& p : m.parameters()) {
        s.values[p.name].assign(p.tensor.values().begin(), p.tensor.values().end());
        s.shapes[p.name] = p.tensor.shape();
    }
    for (const auto& b : m.buffers()) {
        s.values[b.name] = *b.values;
        s.shapes[b.name] = {b.values->size()};
    }
    return s;
}

void restore(model::S4Classifier& m, const ModelState& state, const std::string& prefix) {
    auto find = [&](const std::string& name, std::size_t size) -> const std::vector<double>& {
        const auto it = state.values.find(name);
        if (it == state.values.end()) throw TrainError("checkpoint lacks " + name);
        if (it->second.size() != size) {
            throw TrainError("checkpoint entry " + name + " has " + std::to_string(it->second.size()) +
                             " values, model expects " + std::to_string(size));
        }
        return it->second;
    };
    for (auto& p : m.parameters()) {
        if (!p.name.starts_with(prefix)) continue;
        const auto sh = state.shapes.find(p.name);
        if (sh != state.shapes.end() && sh->second != p.tensor.shape()) {
            throw TrainError("checkpoint entry " + p.name + " has shape " + ad::to_string(sh->second) +
                             ", model expects " + ad::to_string(p.tensor.shape()));
        }
        const auto& v = find(p.name, p.tensor.size());
        std::copy(v.begin(), v.end(), p.tensor.mutable_values().begin());
    }
    for (auto& b : m.buffers()) {
        if (!b.name.starts_with(prefix)) continue;
        *b.values = find(b.name, b.values->size());
    }
}

DataView DataView::standard(const data::Dataset& dataset, bool with_meta) {
    DataView v;
    v.dataset = &dataset;
    const std::vector<int> train_folds{1, 2, 3, 4, 5, 6, 7, 8};
    v.train = dataset.indices_in_folds(train_folds);
    v.validation = dataset.indices_in_folds({9});
    if (with_meta) v.meta_stats = data::fit_metadata(dataset, train_folds);
    return v;
}

Batch make_batch(const data::Dataset& dataset, const std::vector<std::size_t>& records, double window_seconds,
                 const std::optional<data::MetadataStats>& meta, Rng& rng) {
    if (records.empty()) throw TrainError("empty batch");
    const auto& first = dataset.records.at(records.front());
    const std::size_t channels = first.channels;
    const std::size_t width = data::window_samples(window_seconds, first.fs);
    const std::size_t k = dataset.vocabulary.size();
    std::vector<double> signal, meta_values, targets;
    signal.reserve(records.size() * channels * width);
    for (std::size_t idx : records) {
        const auto& r = dataset.records.at(idx);
        if (r.channels != channels || r.fs != first.fs) throw TrainError("record " + r.id + " differs in channels or fs");
        const data::Crop crop = data::random_crop(r, window_seconds, rng);
        signal.insert(signal.end(), crop.values.begin(), crop.values.end());
        if (meta) {
            const auto f = data::impute_metadata(r.meta, *meta);
            meta_values.insert(meta_values.end(), f.values.begin(), f.values.end());
        }
        for (std::size_t j = 0; j < k; ++j) targets.push_back(r.labels.at(j));
    }
    Batch b;
    const std::size_t n = records.size();
    b.signal = ad::Tensor::from({n, channels, width}, std::move(signal));
    if (meta) b.meta = ad::Tensor::from({n, model::MetaFeatures::kCount}, std::move(meta_values));
    b.targets = ad::Tensor::from({n, k}, std::move(targets));
    return b;
}

TrainResult train_supervised(model::S4Classifier& m, const DataView& view, const TrainConfig& config,
                             const TrainHooks& hooks) {
    config.validate();
    if (view.dataset == nullptr) throw TrainError("no dataset");
    if (view.train.empty()) throw TrainError("no training records");
    if (m.uses_meta() && !view.meta_stats) throw TrainError("model uses metadata but no statistics were fitted");
    if (m.n_classes() != view.dataset->vocabulary.size()) {
        throw TrainError("model predicts " + std::to_string(m.n_classes()) + " classes, dataset has " +
                         std::to_string(view.dataset->vocabulary.size()));
    }
    std::vector<model::NamedParameter> params;
    for (const auto& p : m.parameters())
        if (p.tensor.requires_grad() && p.name.starts_with(hooks.parameter_prefix)) params.push_back(p);
    AdamW optimizer(params, AdamWOptions::from(config));
    const std::optional<data::MetadataStats> meta = m.uses_meta() ? view.meta_stats : std::nullopt;

    TrainResult result;
    result.best_val_auc = -1.0;
    const auto started = std::chrono::steady_clock::now();
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng shuffle = make_rng(config.seed, {1, epoch});
        Rng crops = make_rng(config.seed, {2, epoch});
        Rng dropout = make_rng(config.seed, {3, epoch});
        std::vector<std::size_t> order = view.train;
        std::shuffle(order.begin(), order.end(), shuffle);

        double loss_sum = 0.0;
        for (const auto& batch_idx : make_batches(order, config.batch_size)) {
            const Batch batch = make_batch(*view.dataset, batch_idx, config.crop_seconds, meta, crops);
            model::ForwardContext ctx;
            ctx.training = true;
            ctx.rng = &dropout;
            const ad::Tensor loss = bce_with_logits(m.logits(batch.signal, batch.meta, ctx), batch.targets);
            optimizer.zero_grad();
            ad::backward(loss);
            optimizer.step();
            loss_sum += loss.item() * static_cast<double>(batch_idx.size());
        }

        EpochMetrics metrics;
        metrics.epoch = epoch;
        metrics.train_loss = loss_sum / static_cast<double>(order.size());
        metrics.val_macro_auc = std::nan("");
        if (config.validation != "none" && !view.validation.empty()) {
            PredictOptions opts;
            opts.window_seconds = config.crop_seconds;
            opts.n_crops = config.validation == "tta" ? config.tta_crops : 1;
            try {
                metrics.val_macro_auc =
                    eval::macro_auc(predict_dataset(m, *view.dataset, view.validation, meta, opts)).macro;
            } catch (const eval::EvalError&) {
                // Validation fold without both classes for any label.
            }
            if (metrics.val_macro_auc > result.best_val_auc) {
                result.best_val_auc = metrics.val_macro_auc;
                result.best_epoch = epoch;
                result.best = snapshot(m);
            }
        }
        metrics.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.log.push_back(metrics);
        if (hooks.on_epoch) hooks.on_epoch(metrics);
    }
    return result;
}

namespace {

// Sigmoid probabilities averaged over the crops of each record in `group`.
std::vector<std::vector<double>> predict_group(model::Classifier& m, const std::vector<const data::SignalRecord*>& group,
                                               const std::vector<std::optional<model::MetaFeatures>>& metas,
                                               const PredictOptions& options) {
    ad::NoGradGuard no_grad;
    const std::size_t n = options.n_crops;
    std::vector<double> signal, meta_values;
    std::size_t channels = 0, width = 0;
    for (std::size_t g = 0; g < group.size(); ++g) {
        const auto crops = data::tta_crops(*group[g], options.window_seconds, n);
        channels = crops.front().channels;
        width = crops.front().width;
        for (const auto& c : crops) {
            if (c.width != width) throw TrainError("records in a prediction group differ in sampling rate");
            signal.insert(signal.end(), c.values.begin(), c.values.end());
            if (metas[g]) meta_values.insert(meta_values.end(), metas[g]->values.begin(), metas[g]->values.end());
        }
    }
    const std::size_t rows = group.size() * n;
    const ad::Tensor x = ad::Tensor::from({rows, channels, width}, std::move(signal));
    ad::Tensor meta;
    if (m.uses_meta()) {
        if (meta_values.size() != rows * model::MetaFeatures::kCount) throw TrainError("model needs metadata for every record");
        meta = ad::Tensor::from({rows, model::MetaFeatures::kCount}, std::move(meta_values));
    }
    model::ForwardContext ctx;
    ctx.step_scale = options.step_scale;
    const ad::Tensor logits = m.logits(x, meta, ctx);
    const std::size_t k = m.n_classes();
    std::vector<std::vector<double>> out(group.size(), std::vector<double>(k, 0.0));
    for (std::size_t g = 0; g < group.size(); ++g) {
        for (std::size_t c = 0; c < n; ++c)
            for (std::size_t j = 0; j < k; ++j) out[g][j] += sigmoid(logits[(g * n + c) * k + j]);
        for (double& v : out[g]) v /= static_cast<double>(n);
    }
    return out;
}

}  // namespace

std::vector<double> predict_tta(model::Classifier& m, const data::SignalRecord& record,
                                const std::optional<model::MetaFeatures>& meta, const PredictOptions& options) {
    return predict_group(m, {&record}, {meta}, options).front();
}

eval::PredictionSet predict_dataset(model::Classifier& m, const data::Dataset& dataset,
                                    const std::vector<std::size_t>& records,
                                    const std::optional<data::MetadataStats>& meta, const PredictOptions& options) {
    if (m.uses_meta() && !meta) throw TrainError("model uses metadata but no statistics were given");
    eval::PredictionSet set;
    set.n_classes = m.n_classes();
    set.labels = dataset.vocabulary.codes;
    if (set.labels.size() != set.n_classes) set.labels.clear();
    const std::size_t per_group = std::max<std::size_t>(1, options.batch_records);
    for (std::size_t start = 0; start < records.size(); start += per_group) {
        std::vector<const data::SignalRecord*> group;
        std::vector<std::optional<model::MetaFeatures>> metas;
        for (std::size_t i = start; i < std::min(records.size(), start + per_group); ++i) {
            const auto& r = dataset.records.at(records[i]);
            group.push_back(&r);
            metas.push_back(meta ? std::optional(data::impute_metadata(r.meta, *meta)) : std::nullopt);
        }
        const auto probs = predict_group(m, group, metas, options);
        for (std::size_t g = 0; g < group.size(); ++g) {
            set.ids.push_back(group[g]->id);
            set.probabilities.insert(set.probabilities.end(), probs[g].begin(), probs[g].end());
            for (std::size_t j = 0; j < set.n_classes; ++j) set.targets.push_back(group[g]->labels.at(j));
            set.sampling_rate = group[g]->fs;
        }
    }
    return set;
}

void write_metrics_log(const std::filesystem::path& path, const std::vector<EpochMetrics>& log) {
    std::ofstream out(path);
    if (!out) throw TrainError("cannot write " + path.string());
    out << "epoch\ttrain_loss\tval_macro_auc\twall_time\n";
    for (const auto& e : log) {
        out << e.epoch << '\t' << format_number(e.train_loss) << '\t'
            << (std::isnan(e.val_macro_auc) ? std::string("nan") : format_number(e.val_macro_auc)) << '\t'
            << format_number(e.wall_time) << '\n';
    }
}

std::vector<EpochMetrics> read_metrics_log(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw TrainError("cannot open " + path.string());
    std::vector<EpochMetrics> log;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        EpochMetrics e;
        std::string loss, auc, wall;
        ss >> e.epoch >> loss >> auc >> wall;
        e.train_loss = std::stod(loss);
        e.val_macro_auc = auc == "nan" ? std::nan("") : std::stod(auc);
        e.wall_time = std::stod(wall);
        log.push_back(e);
    }
    return log;
}

}  // namespace s4ecg::train
