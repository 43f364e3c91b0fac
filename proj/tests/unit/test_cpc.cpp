#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "s4ecg/cpc.hpp"
#include "support.hpp"

using namespace s4ecg;
using namespace s4ecg::cpc;
using ad::Tensor;

namespace {

CpcConfig tiny_cpc() {
    CpcConfig c;
    c.in_channels = 3;
    c.encoder_layers = 2;
    c.encoder_width = 6;
    c.predictor_depth = 1;
    c.state_dim = 4;
    c.horizon = 3;
    c.head_hidden = 5;
    c.n_neg = 4;
    c.max_anchors = 8;
    c.crop_seconds = 1.0;
    c.dropout = 0.0;
    return c;
}

data::Dataset tiny_corpus(const std::string& task, std::size_t n) {
    data::SynthSpec spec;
    spec.task = task;
    spec.n_records = n;
    spec.fs = 30.0;
    spec.duration = 2.0;
    spec.channels = 3;
    spec.seed = 21;
    return data::synth_generate(spec);
}

double enumeration_loss(const Tensor& z, const Tensor& pred, const ContrastivePairs& pairs) {
    const std::size_t D = z.dim(1), L = z.dim(2);
    auto at = [&](std::size_t p, std::size_t d) { return z[(p / L * D + d) * L + p % L]; };
    double total = 0.0;
    const std::size_t n = pairs.n_candidates;
    for (std::size_t a = 0; a < pairs.anchors.size(); ++a) {
        std::vector<double> s(n);
        for (std::size_t c = 0; c < n; ++c)
            for (std::size_t d = 0; d < D; ++d) s[c] += at(pairs.candidates[a * n + c], d) * pred[a * D + d];
        double denom = 0.0;
        for (double v : s) denom += std::exp(v);
        total += -std::log(std::exp(s[0]) / denom);
    }
    return total / static_cast<double>(pairs.anchors.size());
}

std::map<std::string, Tensor> by_name(const std::vector<model::NamedParameter>& params) {
    std::map<std::string, Tensor> out;
    for (const auto& p : params) out[p.name] = p.tensor;
    return out;
}

}  // namespace

TEST_CASE("uniform scores give ln(1 + n_neg)") {
    Rng rng = make_rng(1);
    const auto pairs = sample_contrastive_pairs(2, 30, 2, 7, 10, false, rng);
    const Tensor z = Tensor::zeros({2, 5, 30});
    const Tensor p = testing::random_tensor({pairs.anchors.size(), 5}, rng, false);
    CHECK(std::abs(infonce_from_scores(contrastive_scores(z, p, pairs)).item() - std::log(8.0)) < 1e-10);
}

TEST_CASE("dominant positive score drives the loss to zero") {
    const Tensor s = Tensor::from({2, 4}, {1e3, 0, 1, -2, 800, 3, 3, 3});
    const double loss = infonce_from_scores(s).item();
    CHECK(loss >= 0.0);
    CHECK(loss < 1e-300);
}

TEST_CASE("InfoNCE matches softmax cross-entropy by enumeration") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng = make_rng(seed, {3});
        const Tensor z = testing::random_tensor({2, 3, 20}, rng, false);
        for (std::size_t k = 1; k <= 2; ++k) {
            const auto pairs = sample_contrastive_pairs(2, 20, k, 4, 128, seed % 2 == 1, rng);
            const Tensor p = testing::random_tensor({pairs.anchors.size(), 3}, rng, false);
            const double got = infonce_from_scores(contrastive_scores(z, p, pairs)).item();
            CHECK(std::abs(got - enumeration_loss(z, p, pairs)) < 1e-10);
        }
    }
}

TEST_CASE("pair sampling respects the sequence and horizon") {
    Rng rng = make_rng(4);
    const std::size_t B = 3, L = 25, k = 4;
    const auto pairs = sample_contrastive_pairs(B, L, k, 6, 10, false, rng);
    CHECK(pairs.n_candidates == 7);
    CHECK(pairs.anchors.size() == B * 10);
    std::vector<std::size_t> hits(L, 0);
    for (std::size_t a = 0; a < pairs.anchors.size(); ++a) {
        const std::size_t anchor = pairs.anchors[a];
        const std::size_t b = anchor / L;
        CHECK(anchor % L + k < L);
        CHECK(pairs.candidates[a * 7] == anchor + k);
        std::set<std::size_t> seen;
        for (std::size_t c = 0; c < 7; ++c) {
            const std::size_t cand = pairs.candidates[a * 7 + c];
            CHECK(cand / L == b);
            seen.insert(cand);
        }
        CHECK(seen.size() == 7);
    }

    // Negatives are uniform over the other positions of the sequence.
    Rng big = make_rng(5);
    std::vector<double> counts(L, 0.0);
    double draws = 0.0;
    for (int rep = 0; rep < 400; ++rep) {
        const auto p = sample_contrastive_pairs(1, L, 1, 3, 128, false, big);
        for (std::size_t a = 0; a < p.anchors.size(); ++a) {
            if (p.anchors[a] != 10) continue;
            for (std::size_t c = 1; c < 4; ++c) {
                counts[p.candidates[a * 4 + c]] += 1.0;
                draws += 1.0;
            }
        }
    }
    CHECK(counts[11] == 0.0);
    const double expected = draws / (L - 1);
    double chi2 = 0.0;
    for (std::size_t j = 0; j < L; ++j)
        if (j != 11) chi2 += (counts[j] - expected) * (counts[j] - expected) / expected;
    CHECK(chi2 < 51.2);  // 0.999 quantile, 23 degrees of freedom

    const auto cross = sample_contrastive_pairs(2, 5, 1, 6, 4, true, rng);
    bool other_sequence = false;
    for (std::size_t a = 0; a < cross.anchors.size(); ++a)
        for (std::size_t c = 1; c < 7; ++c) other_sequence |= cross.candidates[a * 7 + c] / 5 != cross.anchors[a] / 5;
    CHECK(other_sequence);
}

TEST_CASE("horizon and sampling errors") {
    Rng rng = make_rng(6);
    CHECK_THROWS_AS(sample_contrastive_pairs(1, 12, 12, 4, 8, false, rng), CpcError);
    CHECK_THROWS_AS(sample_contrastive_pairs(1, 20, 2, 19, 8, false, rng), CpcError);
    CHECK_NOTHROW(sample_contrastive_pairs(1, 20, 2, 18, 8, false, rng));
    CpcModel m(tiny_cpc(), 1);
    CHECK_THROWS_AS(m.loss(Tensor::zeros({1, 3, 3}), {}, rng), CpcError);
    CpcConfig many = tiny_cpc();
    many.n_neg = 9;
    CpcModel m2(many, 1);
    CHECK_THROWS_AS(m2.loss(Tensor::zeros({1, 3, 10}), {}, rng), CpcError);
}

TEST_CASE("raising the positive score lowers the loss") {
    Rng rng = make_rng(7);
    Tensor z = testing::random_tensor({1, 4, 16}, rng, false);
    const Tensor p = testing::random_tensor({1, 4}, rng, false);
    const auto pairs = sample_contrastive_pairs(1, 16, 1, 3, 1, false, rng);
    const double before = infonce_from_scores(contrastive_scores(z, p, pairs)).item();
    // Move the positive embedding along the prediction.
    const std::size_t pos = pairs.candidates[0];
    for (std::size_t d = 0; d < 4; ++d) z.mutable_values()[d * 16 + pos] += 0.5 * p[d];
    const double after = infonce_from_scores(contrastive_scores(z, p, pairs)).item();
    CHECK(after < before);
    CHECK(after >= 0.0);
}

TEST_CASE("InfoNCE gradient check") {
    Rng rng = make_rng(8);
    Tensor z = testing::random_tensor({2, 3, 10}, rng);
    const auto pairs = sample_contrastive_pairs(2, 10, 2, 4, 5, false, rng);
    Tensor p = testing::random_tensor({pairs.anchors.size(), 3}, rng);
    CHECK(testing::gradcheck({z, p}, [&] { return infonce_from_scores(contrastive_scores(z, p, pairs)); }) < 1e-4);
    Tensor x3 = testing::random_tensor({2, 3, 10}, rng);
    const Tensor w = testing::random_tensor({5, 3}, rng, false);
    CHECK(testing::gradcheck({x3}, [&] { return ad::sum(gather_positions(x3, {0, 9, 13, 19, 13}) * w); }) < 1e-6);

    CpcModel m(tiny_cpc(), 3);
    const Tensor x = testing::random_tensor({2, 3, 12}, rng, false);
    std::vector<Tensor> params;
    for (const auto& np : m.parameters()) params.push_back(np.tensor);
    const double err = testing::gradcheck(params, [&] {
        Rng pr = make_rng(9);
        return m.loss(x, {}, pr);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("encoder is pointwise and matches a per-timestep MLP") {
    CpcModel m(tiny_cpc(), 2);
    Rng rng = make_rng(10);
    const Tensor x = testing::random_tensor({1, 3, 15}, rng, false);
    const Tensor z = m.forward(x, {}).z;
    CHECK(z.shape() == ad::Shape{1, 6, 15});
    auto params = by_name(m.parameters());
    for (std::size_t t = 0; t < 15; ++t) {
        std::vector<double> h{x[t], x[15 + t], x[30 + t]};
        for (std::size_t l = 0; l < 2; ++l) {
            const Tensor& w = params["encoder." + std::to_string(l) + ".weight"];
            const Tensor& b = params["encoder." + std::to_string(l) + ".bias"];
            std::vector<double> next(w.dim(0));
            for (std::size_t o = 0; o < w.dim(0); ++o) {
                double s = b[o];
                for (std::size_t i = 0; i < w.dim(1); ++i) s += w[o * w.dim(1) + i] * h[i];
                next[o] = std::max(0.0, s);
            }
            h = next;
        }
        for (std::size_t d = 0; d < 6; ++d) CHECK(std::abs(z[d * 15 + t] - h[d]) < 1e-12);
    }

    Tensor y = x.detach();
    for (std::size_t c = 0; c < 3; ++c) y.mutable_values()[c * 15 + 7] += 1.0;
    const auto fy = m.forward(y, {});
    for (std::size_t d = 0; d < 6; ++d)
        for (std::size_t t = 0; t < 15; ++t)
            if (t != 7) CHECK(fy.z[d * 15 + t] == z[d * 15 + t]);
    const auto fx = m.forward(x, {});
    for (std::size_t d = 0; d < 6; ++d)
        for (std::size_t t = 0; t < 7; ++t) CHECK(fy.c[d * 15 + t] == fx.c[d * 15 + t]);
}

TEST_CASE("forecast heads match a direct MLP") {
    CpcModel m(tiny_cpc(), 4);
    Rng rng = make_rng(11);
    const Tensor c = testing::random_tensor({9, 6}, rng, false);
    auto params = by_name(m.heads().parameters());
    const Tensor pred = m.heads().predict(c, 2);
    const Tensor &w1 = params["forecast.2.0.weight"], &b1 = params["forecast.2.0.bias"];
    const Tensor &w2 = params["forecast.2.1.weight"], &b2 = params["forecast.2.1.bias"];
    for (std::size_t r = 0; r < 9; ++r) {
        std::vector<double> h(5);
        for (std::size_t o = 0; o < 5; ++o) {
            double s = b1[o];
            for (std::size_t i = 0; i < 6; ++i) s += w1[o * 6 + i] * c[r * 6 + i];
            h[o] = std::max(0.0, s);
        }
        for (std::size_t o = 0; o < 6; ++o) {
            double s = b2[o];
            for (std::size_t i = 0; i < 5; ++i) s += w2[o * 5 + i] * h[i];
            CHECK(std::abs(pred[r * 6 + o] - s) < 1e-12);
        }
    }
    CHECK_THROWS_AS(m.heads().predict(c, 0), CpcError);
    CHECK_THROWS_AS(m.heads().predict(c, 4), CpcError);
}

TEST_CASE("gather_positions picks time steps") {
    Rng rng = make_rng(12);
    const Tensor x = testing::random_tensor({2, 3, 5}, rng, false);
    const Tensor g = gather_positions(x, {7, 0});
    CHECK(g.shape() == ad::Shape{2, 3});
    for (std::size_t d = 0; d < 3; ++d) {
        CHECK(g[d] == x[(1 * 3 + d) * 5 + 2]);
        CHECK(g[3 + d] == x[d * 5]);
    }
    CHECK_THROWS_AS(gather_positions(x, {10}), CpcError);
}

TEST_CASE("pretraining is deterministic") {
    const auto ds = tiny_corpus("ar", 8);
    std::vector<std::size_t> all(ds.records.size());
    std::iota(all.begin(), all.end(), 0);
    TrainConfig t;
    t.epochs = 1;
    t.batch_size = 4;
    t.seed = 3;
    CpcModel a(tiny_cpc(), 5), b(tiny_cpc(), 5);
    const auto la = pretrain(a, ds, all, t);
    const auto lb = pretrain(b, ds, all, t);
    CHECK(la.front().loss == lb.front().loss);
    CHECK(std::isfinite(la.front().loss));
}

TEST_CASE("finetune freezes the backbone in phase one") {
    const auto ds = tiny_corpus("freq", 30);
    std::vector<std::size_t> all(ds.records.size());
    std::iota(all.begin(), all.end(), 0);
    TrainConfig t;
    t.epochs = 1;
    t.batch_size = 8;
    t.seed = 3;
    t.crop_seconds = 1.0;
    t.validation = "none";
    CpcModel cpc(tiny_cpc(), 6);
    pretrain(cpc, ds, all, t);
    const auto ckpt = cpc.to_checkpoint(t, 6, 1);

    auto untouched = classifier_from_pretrained(ckpt, ds.vocabulary.size(), 7);
    const auto fresh = train::snapshot(untouched);
    for (const auto& [name, values] : ckpt.state.values) CHECK(fresh.values.at(name) == values);
    auto twin = classifier_from_pretrained(ckpt, ds.vocabulary.size(), 8);
    CHECK(train::snapshot(twin).values.at("head.weight") != fresh.values.at("head.weight"));

    auto m = classifier_from_pretrained(ckpt, ds.vocabulary.size(), 7);
    const auto view = train::DataView::standard(ds, false);
    finetune(m, view, t, 2, 0);
    const auto after = train::snapshot(m);
    for (const auto& [name, values] : ckpt.state.values) CHECK(after.values.at(name) == values);
    CHECK(after.values.at("head.weight") != fresh.values.at("head.weight"));
    finetune(m, view, t, 0, 1);
    CHECK(train::snapshot(m).values.at("encoder.0.weight") != ckpt.state.values.at("encoder.0.weight"));
}

TEST_CASE("checkpoint round trips are bit-exact") {
    const auto dir = std::filesystem::temp_directory_path();
    model::S4Classifier m(tiny_cpc().model_config(2), 3);
    TrainConfig t;
    t.seed = 12;
    const auto path = dir / "s4ecg_ckpt.cbor";
    checkpoint::save(path, checkpoint::from_model(m, t, 3, 4));
    const auto loaded = checkpoint::load(path);
    CHECK(loaded.epoch == 4);
    CHECK(TrainConfig::from_kv(loaded.train_config) == t);
    auto back = checkpoint::to_model(loaded);
    CHECK(train::snapshot(back).values == train::snapshot(m).values);
    Rng rng = make_rng(13);
    const Tensor x = testing::random_tensor({3, 40}, rng, false);
    const Tensor a = m.forward_signal(x, {}), b = back.forward_signal(x, {});
    for (std::size_t j = 0; j < 2; ++j) CHECK(a[j] == b[j]);

    CpcModel cpc(tiny_cpc(), 4);
    checkpoint::save(path, cpc.to_checkpoint(t, 4, 0));
    auto cpc_back = CpcModel::from_checkpoint(checkpoint::load(path));
    const auto pa = by_name(cpc.parameters()), pb = by_name(cpc_back.parameters());
    for (const auto& [name, tensor] : pa) {
        const auto va = tensor.values(), vb = pb.at(name).values();
        CHECK(std::equal(va.begin(), va.end(), vb.begin(), vb.end()));
    }
    CHECK_THROWS_AS(checkpoint::to_model(checkpoint::load(path)), checkpoint::CheckpointError);

    CpcConfig wider = tiny_cpc();
    wider.encoder_width = 8;
    auto mismatch = checkpoint::load(path);
    mismatch.cpc_config = wider.to_kv();
    CHECK_THROWS_AS(classifier_from_pretrained(mismatch, 2, 1), checkpoint::CheckpointError);

    std::ofstream(path) << "not a checkpoint";
    CHECK_THROWS_AS(checkpoint::load(path), checkpoint::CheckpointError);
    std::filesystem::remove(path);
}
