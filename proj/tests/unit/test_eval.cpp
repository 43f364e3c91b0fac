#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "s4ecg/eval.hpp"
#include "s4ecg/random.hpp"

using namespace s4ecg;
using namespace s4ecg::eval;
namespace fs = std::filesystem;

namespace {

double pairwise_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& t) {
    double num = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (!t[i] || t[j]) continue;
            pairs += 1.0;
            num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
        }
    return num / pairs;
}

PredictionSet random_set(std::size_t n, std::size_t k, Rng& rng, double signal = 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PredictionSet p;
    p.n_classes = k;
    for (std::size_t i = 0; i < n; ++i) {
        p.ids.push_back("r" + std::to_string(i));
        for (std::size_t j = 0; j < k; ++j) {
            const std::uint8_t t = u(rng) < 0.3 ? 1 : 0;
            p.targets.push_back(t);
            p.probabilities.push_back(std::clamp(u(rng) + signal * t, 0.0, 1.0));
        }
    }
    return p;
}

PredictionSet with_scores(const PredictionSet& base, Rng& rng, double signal) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PredictionSet p = base;
    for (std::size_t i = 0; i < p.probabilities.size(); ++i)
        p.probabilities[i] = std::clamp(u(rng) + signal * p.targets[i], 0.0, 1.0);
    return p;
}

}  // namespace

TEST_CASE("auc basics") {
    const std::vector<std::uint8_t> t{0, 0, 1, 1};
    CHECK(*auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, t) == 1.0);
    CHECK(*auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, t) == 0.5);
    CHECK_FALSE(auc(std::vector<double>{0.1, 0.2}, std::vector<std::uint8_t>{1, 1}).has_value());
}

TEST_CASE("auc matches pair enumeration and is rank invariant") {
    Rng rng = make_rng(1);
    std::uniform_int_distribution<int> grid(0, 20);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(50);
        std::vector<std::uint8_t> t(50);
        for (std::size_t i = 0; i < 50; ++i) {
            s[i] = grid(rng) / 20.0;
            t[i] = u(rng) < 0.4;
        }
        t[0] = 1;
        t[1] = 0;
        const double a = *auc(s, t);
        CHECK(a == pairwise_auc(s, t));
        std::vector<double> e(s), f(s);
        for (double& v : e) v = std::exp(v);
        for (double& v : f) v = 3.0 * v - 7.0;
        CHECK(*auc(e, t) == a);
        CHECK(*auc(f, t) == a);
    }
}

TEST_CASE("macro auc") {
    PredictionSet p;
    p.n_classes = 2;
    p.ids = {"a", "b", "c", "d"};
    p.targets = {0, 0, 0, 1, 1, 0, 1, 1};
    p.probabilities = {0.1, 0.5, 0.2, 0.5, 0.8, 0.5, 0.9, 0.5};
    CHECK(macro_auc(p).macro == 0.75);

    // Degenerate label excluded.
    PredictionSet q = p;
    q.n_classes = 2;
    q.targets = {0, 1, 0, 1, 1, 1, 1, 1};
    const auto m = macro_auc(q);
    CHECK_FALSE(m.per_label[1].has_value());
    CHECK(m.macro == 1.0);
    CHECK(m.warnings.size() == 1);

    // Label permutation invariance.
    Rng rng = make_rng(2);
    const PredictionSet r = random_set(80, 4, rng, 0.3);
    PredictionSet perm = r;
    const std::size_t order[] = {2, 0, 3, 1};
    for (std::size_t i = 0; i < r.size(); ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            perm.probabilities[i * 4 + j] = r.probability(i, order[j]);
            perm.targets[i * 4 + j] = r.target(i, order[j]);
        }
    CHECK(macro_auc(perm).macro == doctest::Approx(macro_auc(r).macro).epsilon(1e-15));
}

TEST_CASE("prediction file round trip") {
    Rng rng = make_rng(3);
    PredictionSet p = random_set(20, 3, rng, 0.2);
    p.labels = {"x", "y", "z"};
    p.model_id = "model-1";
    p.seed = 42;
    p.sampling_rate = 500;
    const fs::path path = fs::temp_directory_path() / "s4ecg_pred.tsv";
    write_predictions(path, p);
    const PredictionSet q = read_predictions(path);
    CHECK(q.probabilities == p.probabilities);
    CHECK(q.targets == p.targets);
    CHECK(q.labels == p.labels);
    CHECK(q.model_id == "model-1");
    CHECK(q.seed == 42);
    CHECK(q.sampling_rate == 500);
}

TEST_CASE("percentiles") {
    CHECK(percentile({1, 2, 3, 4}, 0.5) == 2.5);
    CHECK(percentile({5}, 0.3) == 5.0);
    const auto [lo, hi] = central_interval({0, 10, 20, 30, 40}, 0.25);
    CHECK(lo == 10.0);
    CHECK(hi == 30.0);
}

TEST_CASE("bootstrap on identical predictions") {
    Rng rng = make_rng(4);
    const PredictionSet p = random_set(100, 3, rng, 0.2);
    const BootstrapReport r = bootstrap_compare(p, p, 200, 1);
    CHECK(r.macro.ci_low == 0.0);
    CHECK(r.macro.ci_high == 0.0);
    CHECK(r.macro.verdict == 0);
    for (const auto& l : r.per_label) {
        CHECK(l.median == 0.0);
        CHECK(l.verdict == 0);
    }
}

TEST_CASE("bootstrap symmetry under swapping") {
    Rng rng = make_rng(5);
    const PredictionSet a = random_set(150, 3, rng, 0.3);
    const PredictionSet b = with_scores(a, rng, 0.2);
    const BootstrapReport ab = bootstrap_compare(a, b, 300, 9);
    const BootstrapReport ba = bootstrap_compare(b, a, 300, 9);
    auto mirrored = [](const DifferenceSummary& x, const DifferenceSummary& y) {
        CHECK(x.point == -y.point);
        CHECK(x.median == -y.median);
        CHECK(x.q25 == -y.q75);
        CHECK(x.ci_low == -y.ci_high);
        CHECK(x.ci_high == -y.ci_low);
        CHECK(x.verdict == -y.verdict);
    };
    mirrored(ab.macro, ba.macro);
    for (std::size_t j = 0; j < 3; ++j) mirrored(ab.per_label[j], ba.per_label[j]);
}

TEST_CASE("bootstrap detects a constructed gap") {
    Rng rng = make_rng(6);
    PredictionSet perfect = random_set(500, 1, rng);
    for (std::size_t i = 0; i < perfect.size(); ++i) perfect.probabilities[i] = perfect.targets[i] ? 0.9 : 0.1;
    const PredictionSet noise = with_scores(perfect, rng, 0.0);
    const BootstrapReport r = bootstrap_compare(perfect, noise, 1000, 2);
    CHECK(r.macro.verdict == 1);
    CHECK(r.macro.ci_low > 0.0);
}

TEST_CASE("bootstrap parallel equals serial") {
    Rng rng = make_rng(7);
    const PredictionSet a = random_set(100, 2, rng, 0.3);
    const PredictionSet b = with_scores(a, rng, 0.25);
    const auto s = to_json(bootstrap_compare(a, b, 100, 3, 1));
    const auto p = to_json(bootstrap_compare(a, b, 100, 3, 3));
    CHECK(s == p);
    CHECK(to_json(report_from_json(s)) == s);
}

TEST_CASE("bootstrap input validation") {
    Rng rng = make_rng(8);
    const PredictionSet a = random_set(10, 1, rng, 0.3);
    PredictionSet b = a;
    b.ids[3] = "other";
    CHECK_THROWS_AS(bootstrap_compare(a, b, 10, 1), EvalError);
}

TEST_CASE("multi-run verdict rules") {
    auto report = [](int verdict) {
        BootstrapReport r;
        r.per_label.resize(1);
        r.per_label[0].verdict = verdict;
        r.per_label[0].median = 0.01 * verdict;
        r.macro = r.per_label[0];
        return r;
    };
    auto make = [&](int better, int worse, int total) {
        std::vector<BootstrapReport> v;
        for (int i = 0; i < total; ++i) v.push_back(report(i < better ? 1 : (i < better + worse ? -1 : 0)));
        return v;
    };
    CHECK(summarize_comparisons(make(100, 0, 100), 0.6).macro.verdict == Verdict::better);
    CHECK(summarize_comparisons(make(59, 0, 100), 0.6).macro.verdict == Verdict::none);
    CHECK(summarize_comparisons(make(60, 0, 100), 0.6).macro.verdict == Verdict::better);
    CHECK(summarize_comparisons(make(0, 61, 100), 0.6).macro.verdict == Verdict::worse);
    CHECK(summarize_comparisons(make(45, 45, 100), 0.45).macro.verdict == Verdict::none);
    CHECK_THROWS_AS(summarize_comparisons(make(1, 0, 1), 0.4), EvalError);
    for (int better = 0; better <= 100; better += 7)
        for (int worse = 0; better + worse <= 100; worse += 11) {
            const auto v = summarize_comparisons(make(better, worse, 100), 0.6).macro.verdict;
            CHECK_FALSE((v == Verdict::better && worse >= 60));
        }
}

TEST_CASE("curve file round trip and svg") {
    const std::vector<CurvePoint> pts{{1.0, 0.9, 0.85, 0.95, "a b"}, {2.5, 0.93, 0.9, 0.96, "c"}};
    const fs::path path = fs::temp_directory_path() / "s4ecg_curve.dat";
    write_curve(path, pts, "sweep");
    const auto back = read_curve(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].label == "a_b");
    CHECK(back[1].x == 2.5);
    CHECK(back[1].high == 0.96);
    const fs::path svg = fs::temp_directory_path() / "s4ecg_curve.svg";
    write_svg(svg, back, "t", "x", "y");
    CHECK(fs::file_size(svg) > 100);
}
