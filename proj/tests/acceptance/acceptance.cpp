// Acceptance criteria. Run all, or a subset by number: acceptance 1 4 9
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "s4ecg/cpc.hpp"
#include "s4ecg/experiments.hpp"
#include "s4ecg/ssm.hpp"
#include "support.hpp"

using namespace s4ecg;
using ad::Tensor;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

void progress(const std::string& line) {
    std::fprintf(stderr, "  .. %s\n", line.c_str());
}

std::vector<std::size_t> train_folds(const data::Dataset& ds) { return ds.indices_in_folds({1, 2, 3, 4, 5, 6, 7, 8}); }

double test_auc(model::Classifier& m, const data::Dataset& ds, const std::vector<std::size_t>& records,
                const std::optional<data::MetadataStats>& meta = std::nullopt) {
    return eval::macro_auc(train::predict_dataset(m, ds, records, meta, {})).macro;
}

// 1. Convolution kernel against the explicit recurrence.
Outcome kernel_recurrence() {
    const auto start = std::chrono::steady_clock::now();
    Rng rng = make_rng(1);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> dim(1, 16), len(1, 512);
    std::uniform_real_distribution<double> log_step(std::log(1e-3), std::log(1e-1));
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = dim(rng);
        const auto N = static_cast<Eigen::Index>(n);
        ssm::ContinuousSsm s;
        if (trial % 2 == 0) {
            s.A = ssm::hippo_legs(n);
            s.B = ssm::hippo_legs_input(n);
        } else {
            // Random stable system: negative definite symmetric part plus a skew part.
            ssm::Matrix m(N, N), k(N, N);
            for (Eigen::Index i = 0; i < N; ++i)
                for (Eigen::Index j = 0; j < N; ++j) {
                    m(i, j) = normal(rng);
                    k(i, j) = normal(rng);
                }
            s.A = -(m * m.transpose()) / static_cast<double>(n) - 0.1 * ssm::Matrix::Identity(N, N) + (k - k.transpose());
            s.B = ssm::Vector(N);
            for (Eigen::Index i = 0; i < N; ++i) s.B(i) = normal(rng);
        }
        s.C = ssm::Vector(N);
        for (Eigen::Index i = 0; i < N; ++i) s.C(i) = normal(rng);
        s.D = normal(rng);
        const auto d = ssm::discretize_bilinear(s, std::exp(log_step(rng)));
        std::vector<double> u(len(rng));
        for (double& v : u) v = normal(rng);
        const auto kernel = ssm::materialize_kernel(d, u.size());
        const auto rec = ssm::apply_recurrent(d, u, s.D);
        for (auto method : {ssm::ConvMethod::direct, ssm::ConvMethod::fft}) {
            const auto conv = ssm::apply_convolution(kernel, u, s.D, method);
            for (std::size_t t = 0; t < u.size(); ++t) worst = std::max(worst, std::abs(conv[t] - rec[t]));
        }
    }
    const double elapsed = seconds_since(start);
    return {worst < 1e-8 && elapsed < 10.0,
            fmt("max|conv - recurrent| = %.2e over 100 systems, direct and FFT (limit 1e-8); %.1f s (limit 10 s)", worst,
                elapsed)};
}

// 2. Finite-difference checks of every differentiable op and the tiny model.
Outcome gradient_suite() {
    const auto start = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_name;
    std::size_t checks = 0;
    auto record = [&](const std::string& name, double err) {
        ++checks;
        if (!(err <= worst)) {
            worst = err;
            worst_name = name;
        }
    };
    for (std::uint64_t point = 0; point < 3; ++point) {
        Rng data = make_rng(200, {point});
        Tensor a = testing::random_tensor({3, 4}, data);
        Tensor b = testing::random_tensor({3, 4}, data);
        Tensor row = testing::random_tensor({4}, data);
        Tensor pos = ad::exp(testing::random_tensor({3, 4}, data, false)).detach();
        pos.set_requires_grad(true);
        Tensor m1 = testing::random_tensor({3, 4}, data);
        Tensor m2 = testing::random_tensor({4, 2}, data);
        Tensor bias = testing::random_tensor({2}, data);
        Tensor lw = testing::random_tensor({2, 4}, data);
        Tensor x3 = testing::random_tensor({2, 3, 6}, data);
        Tensor w3 = testing::random_tensor({4, 3, 3}, data);
        Tensor b3 = testing::random_tensor({4}, data);
        Tensor gamma = testing::random_tensor({3}, data);
        Tensor beta = testing::random_tensor({3}, data);
        Tensor logits = testing::random_tensor({3, 4}, data, true, 2.0);
        const Tensor targets = Tensor::from({3, 4}, {1, 0, 0, 1, 0, 1, 1, 0, 1, 1, 0, 0});
        const std::uint64_t drop_seed = data();
        auto proj = [&](const Tensor& out) {
            Rng r = make_rng(7, {point});
            return testing::project(out, r);
        };
        record("add", testing::gradcheck({a, row}, [&] { return proj(a + row); }));
        record("sub", testing::gradcheck({a, b}, [&] { return proj(a - b); }));
        record("mul", testing::gradcheck({a, row}, [&] { return proj(a * row); }));
        record("neg", testing::gradcheck({a}, [&] { return proj(-a); }));
        record("exp", testing::gradcheck({a}, [&] { return proj(ad::exp(a)); }));
        record("log", testing::gradcheck({pos}, [&] { return proj(ad::log(pos)); }));
        record("gelu", testing::gradcheck({a}, [&] { return proj(ad::gelu(a)); }));
        record("sigmoid", testing::gradcheck({a}, [&] { return proj(ad::sigmoid(a)); }));
        record("relu", testing::gradcheck({a}, [&] { return proj(ad::relu(a)); }));
        record("scale", testing::gradcheck({a}, [&] { return proj(ad::scale(a, -1.7)); }));
        record("matmul", testing::gradcheck({m1, m2}, [&] { return proj(ad::matmul(m1, m2)); }));
        record("linear", testing::gradcheck({m1, lw, bias}, [&] { return proj(ad::linear(m1, lw, bias)); }));
        record("conv1d causal",
               testing::gradcheck({x3, w3, b3}, [&] { return proj(ad::conv1d(x3, w3, b3, ad::Padding::causal)); }));
        record("conv1d same",
               testing::gradcheck({x3, w3, b3}, [&] { return proj(ad::conv1d(x3, w3, b3, ad::Padding::same)); }));
        record("mean_pool", testing::gradcheck({x3}, [&] { return proj(ad::mean_pool(x3)); }));
        record("sum", testing::gradcheck({a}, [&] { return ad::sum(a * a); }));
        record("mean", testing::gradcheck({a}, [&] { return ad::mean(a * a); }));
        record("logsumexp", testing::gradcheck({a}, [&] { return proj(ad::logsumexp(a)); }));
        record("select_last", testing::gradcheck({x3}, [&] { return proj(ad::select_last(x3, 2)); }));
        record("flip_last", testing::gradcheck({x3}, [&] { return proj(ad::flip_last(x3)); }));
        record("reshape", testing::gradcheck({x3}, [&] { return proj(ad::reshape(x3, {6, 6})); }));
        record("concat", testing::gradcheck({a, b}, [&] { return proj(ad::concat({a, b}, 1)); }));
        record("transpose_last2", testing::gradcheck({x3}, [&] { return proj(ad::transpose_last2(x3)); }));
        record("layer_norm", testing::gradcheck({x3, gamma, beta}, [&] { return proj(ad::layer_norm(x3, gamma, beta)); }));
        record("batch_norm", testing::gradcheck({x3, gamma, beta}, [&] {
                   ad::BatchNormState state;
                   return proj(ad::batch_norm(x3, gamma, beta, state, true));
               }));
        record("dropout", testing::gradcheck({x3}, [&] {
                   Rng r = make_rng(drop_seed);
                   return proj(ad::dropout(x3, 0.3, true, r));
               }));
        record("bce_with_logits", testing::gradcheck({logits}, [&] { return train::bce_with_logits(logits, targets); }));

        // SSM kernel and convolution.
        const std::size_t h = 2, n = 4;
        std::vector<double> hippo;
        for (std::size_t c = 0; c < h; ++c) {
            const auto A = ssm::hippo_legs(n);
            for (Eigen::Index i = 0; i < 4; ++i)
                for (Eigen::Index j = 0; j < 4; ++j) hippo.push_back(A(i, j));
        }
        Tensor A = Tensor::from({h, n, n}, hippo, true);
        Tensor B = testing::random_tensor({h, n}, data);
        Tensor C = testing::random_tensor({h, n}, data);
        Tensor log_step = Tensor::from({h}, {std::log(0.03), std::log(0.2)}, true);
        Tensor u = testing::random_tensor({2, h, 80}, data);
        record("kernel_op", testing::gradcheck({A, B, C, log_step}, [&] {
                   return proj(ssm::kernel_op(A, B, C, log_step, 12, 1.5));
               }));
        for (auto method : {ssm::ConvMethod::direct, ssm::ConvMethod::fft}) {
            record(method == ssm::ConvMethod::fft ? "convolve_op fft" : "convolve_op direct",
                   testing::gradcheck({u, A, B, C, log_step}, [&] {
                       return proj(ssm::convolve_op(u, ssm::kernel_op(A, B, C, log_step, 80), method));
                   }));
        }

        // Contrastive pieces.
        Tensor z = testing::random_tensor({2, 3, 10}, data);
        Tensor c = testing::random_tensor({2, 3, 10}, data);
        Rng pair_rng = make_rng(9, {point});
        const auto pairs = cpc::sample_contrastive_pairs(2, 10, 2, 4, 5, false, pair_rng);
        record("gather_positions + contrastive_scores + infonce", testing::gradcheck({z, c}, [&] {
                   return cpc::infonce_from_scores(cpc::contrastive_scores(z, cpc::gather_positions(c, pairs.anchors), pairs));
               }));
    }

    // Full tiny model, H=4, N=4, L=16.
    std::uint64_t variant = 0;
    for (auto dir : {Directionality::causal, Directionality::bidirectional})
        for (bool meta : {false, true})
            for (auto norm : {NormKind::layer, NormKind::batch}) {
                ModelConfig mc;
                mc.in_channels = 3;
                mc.width = 4;
                mc.state_dim = 4;
                mc.n_classes = 2;
                mc.directionality = dir;
                mc.with_meta = meta;
                mc.meta_hidden = 5;
                mc.norm = norm;
                mc.dropout = 0.1;
                model::S4Classifier m(mc, 11 + variant);
                Rng data = make_rng(300, {variant++});
                // Four samples: with two, batch statistics make the pre-norm bias gradient pure roundoff.
                const Tensor x = testing::random_tensor({4, 3, 16}, data, false);
                const Tensor mf = testing::random_tensor({4, 7}, data, false);
                std::vector<Tensor> params;
                for (const auto& p : m.parameters()) params.push_back(p.tensor);
                const double err = testing::gradcheck(params, [&] {
                    Rng drop = make_rng(5);
                    model::ForwardContext ctx;
                    ctx.training = true;
                    ctx.rng = &drop;
                    Rng w = make_rng(6);
                    return testing::project(m.logits(x, meta ? mf : Tensor{}, ctx), w);
                });
                record(fmt("tiny model (%s%s, %s)", dir == Directionality::causal ? "causal" : "bidirectional",
                           meta ? " + meta" : "", norm == NormKind::layer ? "layer norm" : "batch norm"),
                       err);
            }
    const double elapsed = seconds_since(start);
    return {worst < 1e-3 && elapsed < 60.0,
            fmt("%zu checks, worst relative error %.2e in %s (limit 1e-3); %.1f s (limit 60 s)", checks, worst,
                worst_name.c_str(), elapsed)};
}

// 3. InfoNCE against closed forms and brute-force enumeration.
Outcome infonce_analytic() {
    double worst_uniform = 0.0;
    for (std::size_t n_neg : {1, 7, 16, 40}) {
        Rng rng = make_rng(31, {n_neg});
        const auto pairs = cpc::sample_contrastive_pairs(3, 60, 3, n_neg, 20, false, rng);
        const Tensor z = Tensor::full({3, 6, 60}, 0.7);
        Tensor p = Tensor::zeros({pairs.anchors.size(), 6});
        for (std::size_t a = 0; a < pairs.anchors.size(); ++a)
            for (std::size_t d = 0; d < 6; ++d) p.mutable_values()[a * 6 + d] = 0.1 * static_cast<double>(a % 5) - d * 0.05;
        const double loss = cpc::infonce_from_scores(cpc::contrastive_scores(z, p, pairs)).item();
        worst_uniform = std::max(worst_uniform, std::abs(loss - std::log(1.0 + static_cast<double>(n_neg))));
    }
    double worst_enum = 0.0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        Rng rng = make_rng(32, {seed});
        std::uniform_int_distribution<std::size_t> bd(1, 3), ld(8, 24), dd(1, 5), kd(1, 3);
        const std::size_t B = bd(rng), L = ld(rng), D = dd(rng), k = kd(rng);
        std::uniform_int_distribution<std::size_t> nd(1, std::min<std::size_t>(6, L - 2));
        const std::size_t n_neg = nd(rng);
        const bool cross = seed % 3 == 0;
        const Tensor z = testing::random_tensor({B, D, L}, rng, false, 1.5);
        const Tensor c = testing::random_tensor({B, D, L}, rng, false, 1.5);
        const auto pairs = cpc::sample_contrastive_pairs(B, L, k, n_neg, 6, cross, rng);
        const double got =
            cpc::infonce_from_scores(cpc::contrastive_scores(z, cpc::gather_positions(c, pairs.anchors), pairs)).item();
        double oracle = 0.0;
        const std::size_t nc = pairs.n_candidates;
        for (std::size_t a = 0; a < pairs.anchors.size(); ++a) {
            const std::size_t ap = pairs.anchors[a];
            std::vector<double> s(nc, 0.0);
            for (std::size_t j = 0; j < nc; ++j) {
                const std::size_t cp = pairs.candidates[a * nc + j];
                for (std::size_t d = 0; d < D; ++d) s[j] += z[(cp / L * D + d) * L + cp % L] * c[(ap / L * D + d) * L + ap % L];
            }
            double denom = 0.0;
            for (double v : s) denom += std::exp(v);
            oracle -= std::log(std::exp(s[0]) / denom);
        }
        oracle /= static_cast<double>(pairs.anchors.size());
        worst_enum = std::max(worst_enum, std::abs(got - oracle));
    }
    return {worst_uniform < 1e-10 && worst_enum < 1e-10,
            fmt("uniform scores: max|loss - ln(1+n_neg)| = %.1e; enumeration over 50 instances: max diff %.1e "
                "(limit 1e-10)",
                worst_uniform, worst_enum)};
}

ModelConfig small_s4(std::size_t n_classes, std::size_t channels = 12) {
    ModelConfig mc;
    mc.in_channels = channels;
    mc.width = 32;
    mc.depth = 4;
    mc.state_dim = 8;
    mc.n_classes = n_classes;
    return mc;
}

// 4. Train at 100 Hz, evaluate natively sampled 200 and 500 Hz test sets via step rescaling.
Outcome cross_rate() {
    const auto start = std::chrono::steady_clock::now();
    const std::vector<double> rates{100.0, 200.0, 500.0};
    std::vector<double> loss_sum(rates.size(), 0.0);
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        data::SynthSpec spec;
        spec.task = "freq";
        spec.seed = 40 + seed;
        const auto ds = data::synth_generate(spec);
        model::S4Classifier m(small_s4(ds.vocabulary.size()), seed);
        TrainConfig tc;
        tc.epochs = 20;
        tc.seed = seed;
        tc.validation = "single";
        const auto result = train::train_supervised(m, train::DataView::standard(ds, false), tc);
        train::restore(m, *result.best);

        std::vector<data::Dataset> tests;
        for (double fs : rates) {
            data::SynthSpec ts = spec;
            ts.seed = 400 + seed;
            ts.n_records = 300;
            ts.fs = fs;
            tests.push_back(data::synth_generate(ts));
        }
        std::vector<experiments::RateSet> sets;
        for (const auto& t : tests) {
            std::vector<std::size_t> all(t.records.size());
            std::iota(all.begin(), all.end(), 0);
            sets.push_back({&t, all, std::nullopt});
        }
        const auto res = experiments::cross_rate_eval(m, 100.0, sets, {});
        per_seed += fmt(" seed %llu: %.4f/%.4f/%.4f;", static_cast<unsigned long long>(seed), res[0].macro_auc,
                        res[1].macro_auc, res[2].macro_auc);
        for (std::size_t r = 0; r < rates.size(); ++r) loss_sum[r] += res[0].macro_auc - res[r].macro_auc;
        progress(fmt("cross-rate seed %llu done (%.0f s)", static_cast<unsigned long long>(seed), seconds_since(start)));
    }
    const double loss200 = loss_sum[1] / 3.0, loss500 = loss_sum[2] / 3.0;
    const double elapsed = seconds_since(start);
    return {loss200 < 0.005 && loss500 < 0.005 && elapsed < 1800.0,
            fmt("mean AUC loss vs 100 Hz: 200 Hz %.4f, 500 Hz %.4f (limit 0.005);", loss200, loss500) + per_seed +
                fmt(" %.0f s (limit 1800 s)", elapsed)};
}

// 5. Supervised training with the reference configuration.
Outcome supervised_smoke() {
    const auto start = std::chrono::steady_clock::now();
    data::SynthSpec spec;
    spec.task = "freq";
    spec.seed = 50;
    const auto ds = data::synth_generate(spec);
    model::S4Classifier m(small_s4(ds.vocabulary.size()), 1);
    TrainConfig tc;  // batch 32, lr 1e-3, 50 epochs, AdamW
    tc.seed = 1;
    tc.validation = "tta";
    train::TrainHooks hooks;
    hooks.on_epoch = [&](const train::EpochMetrics& e) {
        if (e.epoch % 10 == 0) progress(fmt("epoch %zu val macro AUC %.4f (%.0f s)", e.epoch, e.val_macro_auc, e.wall_time));
    };
    const auto result = train::train_supervised(m, train::DataView::standard(ds, false), tc, hooks);
    train::restore(m, *result.best);
    const auto test = ds.indices_in_folds({10});
    const double model_auc = test_auc(m, ds, test);

    // Band powers are unbounded scores, so the oracle's AUC is averaged by hand.
    double oracle_auc = 0.0;
    for (std::size_t cls = 0; cls < ds.vocabulary.size(); ++cls) {
        std::vector<double> scores;
        std::vector<std::uint8_t> targets;
        for (std::size_t i : test) {
            scores.push_back(data::spectral_band_scores(ds.records[i])[cls]);
            targets.push_back(ds.records[i].labels[cls]);
        }
        oracle_auc += eval::auc(scores, targets).value_or(0.0) / static_cast<double>(ds.vocabulary.size());
    }
    const double elapsed = seconds_since(start);
    return {model_auc > 0.95 && oracle_auc > 0.99 && elapsed < 1200.0,
            fmt("test macro AUC %.4f (limit > 0.95) at best epoch %zu of 50; spectral oracle %.4f (limit > 0.99); "
                "%.0f s (limit 1200 s)",
                model_auc, result.best_epoch, oracle_auc, elapsed)};
}

// 6. CPC pretraining then finetuning against training from scratch with 10% labels.
Outcome cpc_benefit() {
    const auto start = std::chrono::steady_clock::now();
    int wins = 0;
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        data::SynthSpec spec;
        spec.task = "ar";
        spec.seed = 60 + seed;
        const auto ds = data::synth_generate(spec);
        const auto unlabeled = train_folds(ds);

        CpcConfig cc;
        cc.encoder_width = 32;
        cc.head_hidden = 32;
        TrainConfig pt;
        pt.epochs = 12;
        pt.batch_size = 8;
        pt.seed = 100 + seed;
        cpc::CpcModel cpc_model(cc, seed);
        cpc::pretrain(cpc_model, ds, unlabeled, pt);
        const auto ckpt = cpc_model.to_checkpoint(pt, seed, pt.epochs);

        Rng pick = make_rng(seed, {0x1ab});
        auto labeled = unlabeled;
        std::shuffle(labeled.begin(), labeled.end(), pick);
        labeled.resize(labeled.size() / 10);
        train::DataView view;
        view.dataset = &ds;
        view.train = labeled;
        view.validation = ds.indices_in_folds({9});
        TrainConfig tc;
        tc.batch_size = 8;
        tc.seed = seed;
        tc.validation = "single";
        const auto test = ds.indices_in_folds({10});

        auto pretrained = cpc::classifier_from_pretrained(ckpt, ds.vocabulary.size(), seed);
        const auto ft = cpc::finetune(pretrained, view, tc, 25, 50);
        train::restore(pretrained, *ft.full.best);
        const double auc_pre = test_auc(pretrained, ds, test);

        model::S4Classifier scratch(cc.model_config(ds.vocabulary.size()), seed);
        const auto sr = train::train_supervised(scratch, view, tc);
        train::restore(scratch, *sr.best);
        const double auc_scratch = test_auc(scratch, ds, test);

        wins += auc_pre > auc_scratch;
        per_seed += fmt(" %.3f vs %.3f;", auc_pre, auc_scratch);
        progress(fmt("cpc seed %llu: pretrained %.4f, scratch %.4f (%.0f s)", static_cast<unsigned long long>(seed),
                     auc_pre, auc_scratch, seconds_since(start)));
    }
    return {wins >= 4, fmt("pretrained beats scratch in %d of 5 seeds (limit >= 4); pretrained vs scratch:", wins) +
                           per_seed + fmt(" %.0f s", seconds_since(start))};
}

// 7. Intermediate fusion of static features.
Outcome metadata_fusion() {
    const auto start = std::chrono::steady_clock::now();
    int wins = 0;
    std::string per_seed;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        data::SynthSpec spec;
        spec.task = "meta";
        spec.seed = 70 + seed;
        const auto ds = data::synth_generate(spec);
        const auto view = train::DataView::standard(ds, true);
        const auto test = ds.indices_in_folds({10});
        TrainConfig tc;
        tc.epochs = 15;
        tc.seed = seed;
        tc.validation = "single";
        double auc[2];
        for (bool with_meta : {false, true}) {
            ModelConfig mc = small_s4(ds.vocabulary.size());
            mc.depth = 2;
            mc.with_meta = with_meta;
            model::S4Classifier m(mc, seed);
            const auto r = train::train_supervised(m, view, tc);
            train::restore(m, *r.best);
            auc[with_meta] = test_auc(m, ds, test, view.meta_stats);
        }
        wins += auc[1] - auc[0] > 0.05;
        per_seed += fmt(" %.3f vs %.3f;", auc[1], auc[0]);
        progress(fmt("meta seed %llu: fused %.4f, signal only %.4f (%.0f s)", static_cast<unsigned long long>(seed), auc[1],
                     auc[0], seconds_since(start)));
    }
    return {wins >= 4, fmt("fused beats signal-only by > 0.05 in %d of 5 seeds (limit >= 4); fused vs signal-only:", wins) +
                           per_seed + fmt(" %.0f s", seconds_since(start))};
}

eval::PredictionSet scored_set(const std::vector<std::uint8_t>& targets, std::size_t n_classes, double signal, Rng& rng,
                               const std::string& model_id) {
    std::normal_distribution<double> noise(0.0, 1.0);
    eval::PredictionSet p;
    p.n_classes = n_classes;
    p.model_id = model_id;
    p.targets = targets;
    const std::size_t n = targets.size() / n_classes;
    for (std::size_t i = 0; i < n; ++i) {
        p.ids.push_back("r" + std::to_string(i));
        for (std::size_t j = 0; j < n_classes; ++j) {
            const double score = signal * targets[i * n_classes + j] + noise(rng);
            p.probabilities.push_back(1.0 / (1.0 + std::exp(-score)));
        }
    }
    return p;
}

// 8. Bootstrap calibration, identical-prediction interval and multi-run recount.
Outcome statistics_calibration() {
    const std::size_t n = 500, k = 2;
    int significant = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng = make_rng(80, {seed});
        std::bernoulli_distribution positive(0.3);
        std::vector<std::uint8_t> targets(n);
        for (auto& t : targets) t = positive(rng);
        // Both models score at random.
        const auto a = scored_set(targets, 1, 0.0, rng, "a");
        const auto b = scored_set(targets, 1, 0.0, rng, "b");
        significant += eval::bootstrap_compare(a, b, 1000, seed).macro.verdict != 0;
    }
    const double rate = significant / 100.0;

    Rng rng = make_rng(81);
    std::vector<std::uint8_t> targets(n * k);
    std::bernoulli_distribution positive(0.3);
    for (auto& t : targets) t = positive(rng);
    const auto same = scored_set(targets, k, 1.0, rng, "same");
    const auto ident = eval::bootstrap_compare(same, same, 1000, 3);
    bool zero_ci = ident.macro.ci_low == 0.0 && ident.macro.ci_high == 0.0;
    for (const auto& l : ident.per_label) zero_ci = zero_ci && l.ci_low == 0.0 && l.ci_high == 0.0;

    // Ensembles with a known gap on label 0 and none on label 1.
    std::vector<eval::PredictionSet> runs_a, runs_b;
    for (int r = 0; r < 4; ++r) {
        auto a = scored_set(targets, k, 1.0, rng, "a");
        auto b = scored_set(targets, k, 1.0, rng, "b");
        for (std::size_t i = 0; i < n; ++i)
            if (targets[i * k]) a.probabilities[i * k] = std::sqrt(a.probabilities[i * k]);
        runs_a.push_back(a);
        runs_b.push_back(b);
    }
    const auto report = eval::multi_run_verdict(runs_a, runs_b, 0.6, 300, 17);
    bool recount_ok = true;
    std::vector<std::size_t> better(k + 1, 0), worse(k + 1, 0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            Rng pair = make_rng(17, {i, j});
            const auto c = eval::bootstrap_compare(runs_a[i], runs_b[j], 300, pair());
            for (std::size_t l = 0; l <= k; ++l) {
                const int v = l < k ? c.per_label[l].verdict : c.macro.verdict;
                better[l] += v > 0;
                worse[l] += v < 0;
            }
        }
    auto expected_verdict = [](std::size_t nb, std::size_t nw) {
        const bool b = nb >= 10, w = nw >= 10;  // ceil(0.6 * 16)
        return b == w ? eval::Verdict::none : (b ? eval::Verdict::better : eval::Verdict::worse);
    };
    for (std::size_t l = 0; l <= k; ++l) {
        const auto& got = l < k ? report.per_label[l] : report.macro;
        recount_ok = recount_ok && got.n_better == better[l] && got.n_worse == worse[l] &&
                     got.verdict == expected_verdict(better[l], worse[l]);
    }
    const bool gap_found = report.per_label[0].verdict == eval::Verdict::better;
    return {rate >= 0.02 && rate <= 0.08 && zero_ci && recount_ok && gap_found,
            fmt("null false-significance %.2f over 100 seeds (limit 0.05 +- 0.03); identical CI %s; multi-run recount %s "
                "(label 0: %zu/16 better, verdict %s)",
                rate, zero_ci ? "[0, 0]" : "NOT [0, 0]", recount_ok ? "matches" : "MISMATCH", better[0],
                eval::to_string(report.per_label[0].verdict).c_str())};
}

// 9. Mann-Whitney AUC against O(n^2) pair enumeration.
Outcome auc_oracle() {
    Rng rng = make_rng(90);
    std::size_t mismatches = 0, degenerate_ok = 0, tied = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        std::uniform_int_distribution<std::size_t> nd(1, 80);
        const std::size_t n = nd(rng);
        const bool ties = trial % 2 == 0;
        std::uniform_int_distribution<int> level(0, 4);
        std::normal_distribution<double> normal(0.0, 1.0);
        std::bernoulli_distribution pos(0.4);
        std::vector<double> scores(n);
        std::vector<std::uint8_t> targets(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = ties ? static_cast<double>(level(rng)) : normal(rng);
            targets[i] = pos(rng);
        }
        double credit = 0.0;
        std::size_t np = 0, nn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            np += targets[i];
            nn += !targets[i];
            for (std::size_t j = 0; j < n; ++j) {
                if (!targets[i] || targets[j]) continue;
                credit += scores[i] > scores[j] ? 1.0 : (scores[i] == scores[j] ? 0.5 : 0.0);
            }
        }
        const auto got = eval::auc(scores, targets);
        if (np == 0 || nn == 0) {
            degenerate_ok += !got.has_value();
            mismatches += got.has_value();
            continue;
        }
        tied += ties;
        const double expected = credit / (static_cast<double>(np) * static_cast<double>(nn));
        mismatches += !(got && *got == expected);
    }
    return {mismatches == 0, fmt("%zu mismatches over 1000 instances (%zu with ties, %zu one-class cases returned no AUC)",
                                 mismatches, tied, degenerate_ok)};
}

// 10. Ten-crop schedule and variance reduction.
Outcome tta_contract() {
    bool schedule_ok = true;
    for (auto [L, w] : std::vector<std::pair<std::size_t, std::size_t>>{{1000, 250}, {5000, 1250}, {257, 250}, {250, 250}, {999, 1}}) {
        const auto starts = data::tta_starts(L, w, 10);
        schedule_ok = schedule_ok && starts.size() == 10;
        for (std::size_t i = 0; i < starts.size(); ++i)
            schedule_ok = schedule_ok && starts[i] == static_cast<std::size_t>(std::llround(i * double(L - w) / 9.0));
    }
    const auto ref = data::tta_starts(1000, 250, 10);
    schedule_ok = schedule_ok && ref == std::vector<std::size_t>{0, 83, 167, 250, 333, 417, 500, 583, 667, 750};

    data::SynthSpec spec;
    spec.task = "noise";
    spec.n_records = 200;
    spec.seed = 100;
    const auto ds = data::synth_generate(spec);
    ModelConfig mc = small_s4(1);
    mc.depth = 2;
    model::S4Classifier m(mc, 3);
    train::PredictOptions opts;
    Rng rng = make_rng(101);
    std::vector<double> tta, single;
    for (const auto& r : ds.records) {
        tta.push_back(train::predict_tta(m, r, std::nullopt, opts)[0]);
        const auto crop = data::random_crop(r, opts.window_seconds, rng);
        const Tensor logit = m.forward_signal(Tensor::from({crop.channels, crop.width}, crop.values), {});
        single.push_back(1.0 / (1.0 + std::exp(-logit[0])));
    }
    auto variance = [](const std::vector<double>& v) {
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
        double s = 0.0;
        for (double x : v) s += (x - mean) * (x - mean);
        return s / (v.size() - 1);
    };
    const double vt = variance(tta), vs = variance(single);
    return {schedule_ok && vt < vs,
            fmt("closed-form starts %s; prediction variance over 200 draws: ten-crop %.3e vs single crop %.3e",
                schedule_ok ? "match" : "MISMATCH", vt, vs)};
}

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria{
        {1, "kernel-recurrence equivalence", kernel_recurrence},
        {2, "gradient suite", gradient_suite},
        {3, "InfoNCE analytic cases", infonce_analytic},
        {4, "cross-rate property", cross_rate},
        {5, "supervised learning smoke", supervised_smoke},
        {6, "CPC benefit with 10% labels", cpc_benefit},
        {7, "metadata fusion", metadata_fusion},
        {8, "statistics calibration", statistics_calibration},
        {9, "AUC oracle equivalence", auc_oracle},
        {10, "TTA contract", tta_contract},
    };
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s  criterion %2d  %-32s %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
