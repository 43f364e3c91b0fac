// Command-line front end: synth | train | pretrain | finetune | eval | compare | sweep | cross-rate
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "s4ecg/checkpoint.hpp"
#include "s4ecg/cpc.hpp"
#include "s4ecg/experiments.hpp"
#include "s4ecg/parallel.hpp"

namespace fs = std::filesystem;
using namespace s4ecg;
using nlohmann::json;

namespace {

class CliError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string sha1_hex(const std::string& header, const std::string& content) {
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    EVP_DigestUpdate(ctx, header.data(), header.size());
    EVP_DigestUpdate(ctx, content.data(), content.size());
    EVP_DigestFinal_ex(ctx, digest, &len);
    EVP_MD_CTX_free(ctx);
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

// Git blob id: sha1("blob <size>\0" + content).
std::string git_blob_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CliError("cannot read " + path.string());
    const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return sha1_hex("blob " + std::to_string(content.size()) + '\0', content);
}

// Blob ids of every file below a directory keyed by relative path.
json content_hashes(const fs::path& path) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path))
        if (e.is_regular_file() && e.path().filename() != "run.json") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    json out = json::object();
    for (const auto& f : files) out[fs::relative(f, path).generic_string()] = git_blob_hash(f);
    return out;
}

// Hash of a directory listing, stable across output locations.
std::string tree_hash(const fs::path& dir) { return sha1_hex("", content_hashes(dir).dump()); }

struct Options {
    fs::path out = "out";
    fs::path config_file;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;
    bool f64 = false;
    bool f32 = false;
    std::map<const CLI::App*, std::map<std::string, CLI::Option*>> config_flags;
    std::map<std::string, std::string> config_values;
};

// Every config key gets a --section.key flag; the flag overrides the config file.
void add_config_flags(CLI::App* cmd, Options& o, const std::string& section, const KeyValues& defaults) {
    for (const auto& [key, value] : defaults) {
        if (key == "in_channels" || key == "n_classes") continue;  // taken from the dataset
        const std::string name = section + "." + key;
        o.config_flags[cmd][name] =
            cmd->add_option("--" + name, o.config_values[name], "default " + value)->group(section + " config");
    }
}

KeyValues merged_config(const Options& o, const CLI::App* cmd) {
    static const std::map<std::string, CLI::Option*> none;
    const auto it = o.config_flags.find(cmd);
    const auto& flags = it == o.config_flags.end() ? none : it->second;
    KeyValues kv;
    if (!o.config_file.empty()) {
        kv = read_key_values(o.config_file);
        for (const auto& [key, value] : kv)
            if (!flags.count(key)) throw ConfigError("unknown config key '" + key + "' in " + o.config_file.string());
    }
    for (const auto& [name, opt] : flags)
        if (opt->count() > 0) kv[name] = o.config_values.at(name);
    return kv;
}

TrainConfig train_config(const KeyValues& kv, std::uint64_t seed) {
    KeyValues t = strip_prefix(kv, "train.");
    if (!t.count("seed")) t["seed"] = std::to_string(seed);
    return TrainConfig::from_kv(t);
}

data::Dataset load_dataset(const fs::path& manifest, std::uint64_t seed) {
    data::Dataset ds = data::ingest(manifest);
    for (const auto& w : data::ensure_folds(ds, 10, seed)) std::cerr << "warning: " << w << "\n";
    return ds;
}

void write_run_record(const Options& o, const std::string& command, const KeyValues& config,
                      const std::vector<fs::path>& inputs, std::size_t run_index = 0, const fs::path& dir = {}) {
    json j;
    j["command"] = command;
    j["seed"] = o.seed;
    j["run_index"] = run_index;
    j["precision"] = "f64";
    j["config"] = config;
    j["inputs"] = json::object();
    for (const auto& p : inputs) {
        // Manifests pull in the signal files beside them.
        const fs::path hashed = p.extension() == ".tsv" ? p.parent_path() : p;
        const fs::path target = hashed.empty() ? fs::path(".") : hashed;
        j["inputs"][p.string()] = fs::is_directory(target) ? tree_hash(target) : git_blob_hash(target);
    }
    const fs::path target = dir.empty() ? o.out : dir;
    fs::create_directories(target);
    std::ofstream(target / "run.json") << j.dump(2) << "\n";
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw CliError("not a number: '" + item + "'");
        }
    }
    if (out.empty()) throw CliError("empty list");
    return out;
}

model::S4Classifier fresh_model(const KeyValues& kv, const data::Dataset& ds, std::uint64_t seed) {
    ModelConfig mc = ModelConfig::from_kv(strip_prefix(kv, "model."));
    mc.in_channels = ds.records.at(0).channels;
    mc.n_classes = ds.vocabulary.size();
    mc.validate();
    return model::S4Classifier(mc, seed);
}

void train_one(const Options& o, const data::Dataset& ds, const KeyValues& kv, std::size_t run, const fs::path& dir,
               const fs::path& manifest) {
    TrainConfig tc = train_config(kv, o.seed + run);
    auto m = fresh_model(kv, ds, o.seed + run);
    const auto view = train::DataView::standard(ds, m.config().with_meta);
    train::TrainHooks hooks;
    hooks.on_epoch = [&](const train::EpochMetrics& e) {
        std::fprintf(stderr, "run %zu epoch %zu loss %.5f val_macro_auc %.4f\n", run, e.epoch, e.train_loss,
                     e.val_macro_auc);
    };
    const auto result = train::train_supervised(m, view, tc, hooks);
    fs::create_directories(dir);
    train::write_metrics_log(dir / "metrics.tsv", result.log);
    checkpoint::save(dir / "final.ckpt", checkpoint::from_model(m, tc, o.seed + run, tc.epochs));
    checkpoint::save(dir / "model.ckpt", checkpoint::from_model(m, tc, o.seed + run, result.best_epoch, result.best));
    write_run_record(o, "train", kv, {manifest}, run, dir);
}

eval::PredictionSet predict(model::S4Classifier& m, const data::Dataset& ds, const std::vector<int>& folds,
                            const train::PredictOptions& popts, const std::vector<int>& stat_folds) {
    const auto records = ds.indices_in_folds(folds);
    if (records.empty()) throw CliError("no records in the requested folds");
    std::optional<data::MetadataStats> meta;
    if (m.config().with_meta) meta = data::fit_metadata(ds, stat_folds);
    return train::predict_dataset(m, ds, records, meta, popts);
}

std::vector<int> parse_folds(const std::string& text) {
    std::vector<int> folds;
    for (double f : parse_list(text)) folds.push_back(static_cast<int>(f));
    return folds;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"S4 sequence models for multi-label ECG classification"};
    app.require_subcommand(1);
    Options o;
    app.add_option("--jobs", o.jobs, "worker threads for multi-run training and bootstrap")->check(CLI::PositiveNumber);
    app.add_flag("--f64", o.f64, "64-bit precision (the only supported mode)");
    app.add_flag("--f32", o.f32, "32-bit precision (not supported)");

    const KeyValues model_defaults = ModelConfig{}.to_kv();
    const KeyValues train_defaults = TrainConfig{}.to_kv();
    const KeyValues cpc_defaults = CpcConfig{}.to_kv();
    auto common = [&](CLI::App* cmd) {
        cmd->add_option("--out", o.out, "output directory")->capture_default_str();
        cmd->add_option("--seed", o.seed, "base seed")->capture_default_str();
        cmd->add_option("--config", o.config_file, "key=value config file (model.*, train.*, cpc.* keys)")
            ->check(CLI::ExistingFile);
    };

    // synth
    data::SynthSpec synth;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset (manifest + signals)");
    synth_cmd->add_option("--task", synth.task, "freq | ar | meta | pulse | noise")
        ->check(CLI::IsMember(data::synth_tasks()))
        ->capture_default_str();
    synth_cmd->add_option("--records", synth.n_records, "number of records")->capture_default_str();
    synth_cmd->add_option("--fs", synth.fs, "sampling rate in Hz")->capture_default_str();
    synth_cmd->add_option("--duration", synth.duration, "seconds per record")->capture_default_str();
    synth_cmd->add_option("--channels", synth.channels, "leads per record")->capture_default_str();
    synth_cmd->add_option("--noise", synth.noise, "nuisance scale")->capture_default_str();
    common(synth_cmd);

    // train
    fs::path data_path;
    std::size_t runs = 1;
    auto* train_cmd = app.add_subcommand("train", "supervised training; writes model.ckpt (best validation) and final.ckpt per run");
    train_cmd->add_option("--data", data_path, "dataset manifest")->required()->check(CLI::ExistingFile);
    train_cmd->add_option("--runs", runs, "independent runs with seeds seed, seed+1, ...")->capture_default_str();
    common(train_cmd);
    add_config_flags(train_cmd, o, "model", model_defaults);
    add_config_flags(train_cmd, o, "train", train_defaults);

    // pretrain
    auto* pretrain_cmd = app.add_subcommand("pretrain", "CPC pretraining; writes cpc.ckpt");
    pretrain_cmd->add_option("--data", data_path, "dataset manifest (labels unused)")->required()->check(CLI::ExistingFile);
    common(pretrain_cmd);
    add_config_flags(pretrain_cmd, o, "cpc", cpc_defaults);
    add_config_flags(pretrain_cmd, o, "train", train_defaults);

    // finetune
    fs::path pretrained_path;
    std::size_t head_epochs = 25, full_epochs = 50;
    double label_fraction = 1.0;
    auto* finetune_cmd = app.add_subcommand("finetune", "attach a classifier to a CPC checkpoint and train it");
    finetune_cmd->add_option("--pretrained", pretrained_path, "cpc checkpoint")->required()->check(CLI::ExistingFile);
    finetune_cmd->add_option("--data", data_path, "dataset manifest")->required()->check(CLI::ExistingFile);
    finetune_cmd->add_option("--head-epochs", head_epochs, "epochs with a frozen backbone")->capture_default_str();
    finetune_cmd->add_option("--full-epochs", full_epochs, "epochs training everything")->capture_default_str();
    finetune_cmd->add_option("--label-fraction", label_fraction, "fraction of training records with labels")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    common(finetune_cmd);
    add_config_flags(finetune_cmd, o, "train", train_defaults);

    // eval
    fs::path model_path;
    std::string folds_text = "10", stat_folds_text = "1,2,3,4,5,6,7,8";
    train::PredictOptions popts;
    double train_rate = 0.0;
    auto* eval_cmd = app.add_subcommand("eval", "TTA predictions for a fold selection; writes predictions.tsv");
    eval_cmd->add_option("--model", model_path, "supervised checkpoint")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--data", data_path, "dataset manifest")->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--folds", folds_text, "comma-separated folds to predict")->capture_default_str();
    eval_cmd->add_option("--stat-folds", stat_folds_text, "folds that fit the metadata statistics")->capture_default_str();
    eval_cmd->add_option("--window", popts.window_seconds, "TTA window in seconds")->capture_default_str();
    eval_cmd->add_option("--crops", popts.n_crops, "TTA crops")->capture_default_str();
    eval_cmd->add_option("--train-rate", train_rate, "rescale steps from this training rate to the data rate");
    common(eval_cmd);

    // compare
    std::vector<fs::path> preds_a, preds_b;
    std::size_t n_iter = 1000;
    double threshold = 0.6;
    auto* compare_cmd = app.add_subcommand("compare", "paired bootstrap comparison of prediction files");
    compare_cmd->add_option("--a", preds_a, "predictions of model A (one per run)")->required()->check(CLI::ExistingFile);
    compare_cmd->add_option("--b", preds_b, "predictions of model B (one per run)")->required()->check(CLI::ExistingFile);
    compare_cmd->add_option("--iterations", n_iter, "bootstrap iterations")->capture_default_str();
    compare_cmd->add_option("--threshold", threshold, "fraction of significant comparisons for a verdict")
        ->capture_default_str();
    common(compare_cmd);

    // sweep
    std::string windows_text = "1,2.5,5";
    auto* sweep_cmd = app.add_subcommand("sweep", "train one model per input window and evaluate fold 10");
    sweep_cmd->add_option("--data", data_path, "dataset manifest")->required()->check(CLI::ExistingFile);
    sweep_cmd->add_option("--windows", windows_text, "comma-separated window lengths in seconds")->capture_default_str();
    common(sweep_cmd);
    add_config_flags(sweep_cmd, o, "model", model_defaults);
    add_config_flags(sweep_cmd, o, "train", train_defaults);

    // cross-rate
    std::vector<fs::path> rate_data;
    auto* rate_cmd = app.add_subcommand("cross-rate", "evaluate a checkpoint on datasets at other sampling rates");
    rate_cmd->add_option("--model", model_path, "supervised checkpoint")->required()->check(CLI::ExistingFile);
    rate_cmd->add_option("--data", rate_data, "dataset manifests, one per rate")->required()->check(CLI::ExistingFile);
    rate_cmd->add_option("--train-rate", train_rate, "sampling rate the model was trained at")->required();
    rate_cmd->add_option("--folds", folds_text, "comma-separated folds to predict")->capture_default_str();
    common(rate_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (o.f32) throw CliError("precision f32 is not supported; this build computes in f64 only");
        const CLI::App* cmd = app.get_subcommands().front();
        const std::string command = cmd->get_name();
        const KeyValues kv = merged_config(o, cmd);

        if (command == "synth") {
            synth.seed = o.seed;
            const auto ds = data::synth_generate(synth);
            data::export_dataset(ds, o.out);
            KeyValues spec{{"synth.task", synth.task},
                           {"synth.records", std::to_string(synth.n_records)},
                           {"synth.fs", std::to_string(synth.fs)},
                           {"synth.duration", std::to_string(synth.duration)},
                           {"synth.channels", std::to_string(synth.channels)},
                           {"synth.noise", std::to_string(synth.noise)}};
            const std::string hash = tree_hash(o.out);
            write_run_record(o, command, spec, {});
            std::cout << hash << "\n";
        } else if (command == "train") {
            if (runs == 0) throw CliError("--runs must be >= 1");
            const auto ds = load_dataset(data_path, o.seed);
            parallel_for(runs, o.jobs, [&](std::size_t r) {
                train_one(o, ds, kv, r, runs == 1 ? o.out : o.out / ("run-" + std::to_string(r)), data_path);
            });
            if (runs > 1) write_run_record(o, command, kv, {data_path});
        } else if (command == "pretrain") {
            const auto ds = load_dataset(data_path, o.seed);
            CpcConfig cc = CpcConfig::from_kv(strip_prefix(kv, "cpc."));
            cc.in_channels = ds.records.at(0).channels;
            const TrainConfig tc = train_config(kv, o.seed);
            cpc::CpcModel m(cc, o.seed);
            const auto log = cpc::pretrain(m, ds, ds.indices_in_folds({1, 2, 3, 4, 5, 6, 7, 8}), tc,
                                           [](const cpc::PretrainEpoch& e) {
                                               std::fprintf(stderr, "epoch %zu infonce %.5f\n", e.epoch, e.loss);
                                           });
            fs::create_directories(o.out);
            std::ofstream metrics(o.out / "pretrain.tsv");
            metrics << "epoch\tinfonce\twall_time\n";
            for (const auto& e : log) metrics << e.epoch << '\t' << e.loss << '\t' << e.wall_time << '\n';
            checkpoint::save(o.out / "cpc.ckpt", m.to_checkpoint(tc, o.seed, tc.epochs));
            write_run_record(o, command, kv, {data_path});
        } else if (command == "finetune") {
            const auto ds = load_dataset(data_path, o.seed);
            const auto ckpt = checkpoint::load(pretrained_path);
            auto m = cpc::classifier_from_pretrained(ckpt, ds.vocabulary.size(), o.seed);
            auto view = train::DataView::standard(ds, false);
            if (label_fraction < 1.0) {
                Rng pick = make_rng(o.seed, {0x1ab});
                std::shuffle(view.train.begin(), view.train.end(), pick);
                view.train.resize(std::max<std::size_t>(1, static_cast<std::size_t>(label_fraction * view.train.size())));
            }
            const TrainConfig tc = train_config(kv, o.seed);
            const auto result = cpc::finetune(m, view, tc, head_epochs, full_epochs);
            fs::create_directories(o.out);
            train::write_metrics_log(o.out / "head_only.tsv", result.head_only.log);
            train::write_metrics_log(o.out / "metrics.tsv", result.full.log);
            checkpoint::save(o.out / "final.ckpt", checkpoint::from_model(m, tc, o.seed, full_epochs));
            checkpoint::save(o.out / "model.ckpt",
                             checkpoint::from_model(m, tc, o.seed, result.full.best_epoch, result.full.best));
            write_run_record(o, command, kv, {data_path, pretrained_path});
        } else if (command == "eval") {
            const auto ds = load_dataset(data_path, o.seed);
            const auto ckpt = checkpoint::load(model_path);
            auto m = checkpoint::to_model(ckpt);
            if (train_rate > 0.0) popts.step_scale = ssm::rescale_step(1.0, train_rate, ds.records.at(0).fs);
            auto set = predict(m, ds, parse_folds(folds_text), popts, parse_folds(stat_folds_text));
            set.model_id = model_path.string();
            set.seed = ckpt.seed;
            fs::create_directories(o.out);
            eval::write_predictions(o.out / "predictions.tsv", set);
            const auto auc = eval::macro_auc(set);
            for (const auto& w : auc.warnings) std::cerr << "warning: " << w << "\n";
            std::printf("macro_auc\t%.6f\n", auc.macro);
            write_run_record(o, command, kv, {data_path, model_path});
        } else if (command == "compare") {
            std::vector<eval::PredictionSet> a, b;
            for (const auto& p : preds_a) a.push_back(eval::read_predictions(p));
            for (const auto& p : preds_b) b.push_back(eval::read_predictions(p));
            fs::create_directories(o.out);
            std::vector<fs::path> inputs = preds_a;
            inputs.insert(inputs.end(), preds_b.begin(), preds_b.end());
            if (a.size() == 1 && b.size() == 1) {
                const auto report = eval::bootstrap_compare(a[0], b[0], n_iter, o.seed, o.jobs);
                std::ofstream(o.out / "report.json") << eval::to_json(report).dump(2) << "\n";
                std::printf("macro\tpoint %.6f\tci [%.6f, %.6f]\tverdict %d\n", report.macro.point, report.macro.ci_low,
                            report.macro.ci_high, report.macro.verdict);
            } else {
                const auto report = eval::multi_run_verdict(a, b, threshold, n_iter, o.seed, o.jobs);
                std::ofstream(o.out / "report.json") << eval::to_json(report, true).dump(2) << "\n";
                std::printf("macro\t%s\t%zu better, %zu worse of %zu\n", eval::to_string(report.macro.verdict).c_str(),
                            report.macro.n_better, report.macro.n_worse, report.macro.n_comparisons);
            }
            write_run_record(o, command, {{"iterations", std::to_string(n_iter)}, {"threshold", std::to_string(threshold)}},
                             inputs);
        } else if (command == "sweep") {
            const auto ds = load_dataset(data_path, o.seed);
            auto probe = fresh_model(kv, ds, o.seed);
            const auto view = train::DataView::standard(ds, probe.config().with_meta);
            const auto points = experiments::input_size_sweep(probe.config(), train_config(kv, o.seed),
                                                              parse_list(windows_text), view, ds.indices_in_folds({10}),
                                                              o.seed);
            std::vector<eval::CurvePoint> curve;
            for (const auto& p : points) {
                curve.push_back({p.window_seconds, p.macro_auc, p.macro_auc, p.macro_auc, "s4"});
                std::printf("%g\t%.6f\tbest_epoch %zu\n", p.window_seconds, p.macro_auc, p.best_epoch);
            }
            fs::create_directories(o.out);
            eval::write_curve(o.out / "sweep.dat", curve, "macro AUC by input window");
            eval::write_svg(o.out / "sweep.svg", curve, "macro AUC by input window", "window (s)", "macro AUC");
            write_run_record(o, command, kv, {data_path});
        } else if (command == "cross-rate") {
            const auto ckpt = checkpoint::load(model_path);
            auto m = checkpoint::to_model(ckpt);
            std::vector<data::Dataset> sets;
            for (const auto& p : rate_data) sets.push_back(load_dataset(p, o.seed));
            std::vector<experiments::RateSet> rate_sets;
            for (const auto& ds : sets) {
                std::optional<data::MetadataStats> meta;
                if (m.config().with_meta) meta = data::fit_metadata(ds, {1, 2, 3, 4, 5, 6, 7, 8});
                rate_sets.push_back({&ds, ds.indices_in_folds(parse_folds(folds_text)), meta});
            }
            const auto results = experiments::cross_rate_eval(m, train_rate, rate_sets, popts);
            fs::create_directories(o.out);
            json j = json::array();
            for (const auto& r : results) {
                j.push_back({{"test_rate", r.test_rate}, {"step_scale", r.step_scale}, {"macro_auc", r.macro_auc}});
                std::ostringstream name;
                name << "predictions_" << r.test_rate << "hz.tsv";
                eval::write_predictions(o.out / name.str(), r.predictions);
                std::printf("%g Hz\tstep_scale %.4f\tmacro_auc %.6f\n", r.test_rate, r.step_scale, r.macro_auc);
            }
            std::ofstream(o.out / "cross_rate.json") << j.dump(2) << "\n";
            std::vector<fs::path> inputs = rate_data;
            inputs.push_back(model_path);
            write_run_record(o, command, {{"train_rate", std::to_string(train_rate)}}, inputs);
        }
    } catch (const std::exception& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        std::fprintf(stderr, "error: %s\n", msg.c_str());
        return 1;
    }
    return 0;
}
