#include "s4ecg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "s4ecg/parallel.hpp"
#include "s4ecg/random.hpp"

namespace s4ecg::eval {

namespace fs = std::filesystem;

namespace {

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, '\t')) out.push_back(field);
    if (!line.empty() && line.back() == '\t') out.emplace_back();
    return out;
}

double lower_percentile(const std::vector<double>& sorted, double p) {
    const std::size_t n = sorted.size();
    if (n == 0) throw EvalError("percentile of an empty sample");
    const double pos = p * static_cast<double>(n - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    if (i + 1 >= n) return sorted[n - 1];
    const double f = pos - static_cast<double>(i);
    return (1.0 - f) * sorted[i] + f * sorted[i + 1];
}

// Labels sorted by score once; bootstrap draws only change multiplicities.
struct RankedLabel {
    std::vector<std::size_t> order;       // record indices by ascending score
    std::vector<std::size_t> group_end;   // tie groups: order[group_start, group_end)
};

RankedLabel rank_label(const std::vector<double>& scores) {
    RankedLabel r;
    r.order.resize(scores.size());
    std::iota(r.order.begin(), r.order.end(), 0);
    std::stable_sort(r.order.begin(), r.order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    for (std::size_t i = 0; i < r.order.size(); ++i) {
        if (i + 1 == r.order.size() || scores[r.order[i + 1]] != scores[r.order[i]]) r.group_end.push_back(i + 1);
    }
    return r;
}

std::optional<double> weighted_auc(const RankedLabel& ranked, const std::vector<std::uint8_t>& targets,
                                   const std::vector<double>& weights) {
    double cum_neg = 0.0, num = 0.0, total_pos = 0.0;
    std::size_t start = 0;
    for (std::size_t end : ranked.group_end) {
        double gp = 0.0, gn = 0.0;
        for (std::size_t k = start; k < end; ++k) {
            const std::size_t idx = ranked.order[k];
            (targets[idx] ? gp : gn) += weights[idx];
        }
        num += gp * (cum_neg + 0.5 * gn);
        cum_neg += gn;
        total_pos += gp;
        start = end;
    }
    if (total_pos == 0.0 || cum_neg == 0.0) return std::nullopt;
    return num / (total_pos * cum_neg);
}

DifferenceSummary summarize(double point, const std::vector<double>& diffs) {
    DifferenceSummary s;
    s.point = point;
    s.valid_iterations = diffs.size();
    if (diffs.empty()) {
        s.point = s.median = s.q25 = s.q75 = s.ci_low = s.ci_high = std::nan("");
        return s;
    }
    s.median = percentile(diffs, 0.5);
    std::tie(s.q25, s.q75) = central_interval(diffs, 0.25);
    std::tie(s.ci_low, s.ci_high) = central_interval(diffs, 0.025);
    s.verdict = s.ci_low > 0.0 ? 1 : (s.ci_high < 0.0 ? -1 : 0);
    return s;
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

double number_from(const nlohmann::json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

nlohmann::json to_json(const DifferenceSummary& s) {
    return {{"point", number_or_null(s.point)},     {"median", number_or_null(s.median)},
            {"q25", number_or_null(s.q25)},         {"q75", number_or_null(s.q75)},
            {"ci_low", number_or_null(s.ci_low)},   {"ci_high", number_or_null(s.ci_high)},
            {"significant", s.verdict != 0},        {"verdict", s.verdict},
            {"valid_iterations", s.valid_iterations}};
}

DifferenceSummary summary_from_json(const nlohmann::json& j) {
    DifferenceSummary s;
    s.point = number_from(j.at("point"));
    s.median = number_from(j.at("median"));
    s.q25 = number_from(j.at("q25"));
    s.q75 = number_from(j.at("q75"));
    s.ci_low = number_from(j.at("ci_low"));
    s.ci_high = number_from(j.at("ci_high"));
    s.verdict = j.at("verdict").get<int>();
    s.valid_iterations = j.at("valid_iterations").get<std::size_t>();
    return s;
}

RunComparison count_verdicts(const std::vector<int>& verdicts, const std::vector<double>& medians, double threshold) {
    RunComparison c;
    c.n_comparisons = verdicts.size();
    for (int v : verdicts) {
        c.n_better += v > 0;
        c.n_worse += v < 0;
    }
    const auto required =
        static_cast<std::size_t>(std::ceil(threshold * static_cast<double>(c.n_comparisons) - 1e-9));
    const bool better = c.n_comparisons > 0 && c.n_better >= required;
    const bool worse = c.n_comparisons > 0 && c.n_worse >= required;
    c.verdict = better == worse ? Verdict::none : (better ? Verdict::better : Verdict::worse);
    std::vector<double> finite;
    for (double m : medians)
        if (std::isfinite(m)) finite.push_back(m);
    if (finite.empty()) {
        c.median_of_medians = c.q25 = c.q75 = std::nan("");
    } else {
        c.median_of_medians = percentile(finite, 0.5);
        std::tie(c.q25, c.q75) = central_interval(finite, 0.25);
    }
    return c;
}

nlohmann::json to_json(const RunComparison& c) {
    return {{"verdict", to_string(c.verdict)},
            {"n_better", c.n_better},
            {"n_worse", c.n_worse},
            {"n_comparisons", c.n_comparisons},
            {"median_of_medians", number_or_null(c.median_of_medians)},
            {"q25", number_or_null(c.q25)},
            {"q75", number_or_null(c.q75)}};
}

}  // namespace

std::vector<double> PredictionSet::class_scores(std::size_t cls) const {
    std::vector<double> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = probability(i, cls);
    return out;
}

std::vector<std::uint8_t> PredictionSet::class_targets(std::size_t cls) const {
    std::vector<std::uint8_t> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = target(i, cls);
    return out;
}

void PredictionSet::validate() const {
    if (n_classes == 0) throw EvalError("prediction set has no classes");
    if (probabilities.size() != size() * n_classes || targets.size() != size() * n_classes) {
        throw EvalError("prediction set arrays do not match " + std::to_string(size()) + " records x " +
                        std::to_string(n_classes) + " classes");
    }
    if (!labels.empty() && labels.size() != n_classes) throw EvalError("prediction set label names do not match classes");
    for (double p : probabilities)
        if (!(p >= 0.0 && p <= 1.0)) throw EvalError("probability outside [0, 1]: " + format_number(p));
    for (auto t : targets)
        if (t > 1) throw EvalError("target outside {0, 1}");
}

void write_predictions(const fs::path& path, const PredictionSet& set) {
    set.validate();
    std::ofstream out(path);
    if (!out) throw EvalError("cannot write " + path.string());
    out << "# model: " << set.model_id << '\n'
        << "# seed: " << set.seed << '\n'
        << "# sampling_rate: " << format_number(set.sampling_rate) << '\n'
        << "id";
    auto name = [&](std::size_t j) { return set.labels.empty() ? std::to_string(j) : set.labels[j]; };
    for (std::size_t j = 0; j < set.n_classes; ++j) out << "\ttarget:" << name(j);
    for (std::size_t j = 0; j < set.n_classes; ++j) out << "\tprob:" << name(j);
    out << '\n';
    for (std::size_t i = 0; i < set.size(); ++i) {
        out << set.ids[i];
        for (std::size_t j = 0; j < set.n_classes; ++j) out << '\t' << static_cast<int>(set.target(i, j));
        for (std::size_t j = 0; j < set.n_classes; ++j) out << '\t' << format_number(set.probability(i, j));
        out << '\n';
    }
    if (!out) throw EvalError("failed writing " + path.string());
}

PredictionSet read_predictions(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw EvalError("cannot open prediction file " + path.string());
    PredictionSet set;
    std::string line;
    bool header = false;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string body = line.substr(1);
            const auto colon = body.find(':');
            if (colon == std::string::npos) continue;
            std::string key = body.substr(0, colon), value = body.substr(colon + 1);
            key.erase(0, key.find_first_not_of(' '));
            value.erase(0, value.find_first_not_of(' '));
            if (key == "model") set.model_id = value;
            if (key == "seed") set.seed = std::stoull(value);
            if (key == "sampling_rate") set.sampling_rate = std::stod(value);
            continue;
        }
        const auto f = split_tabs(line);
        if (!header) {
            header = true;
            if (f.empty() || f[0] != "id" || f.size() % 2 != 1) throw EvalError(path.string() + ": malformed header");
            set.n_classes = (f.size() - 1) / 2;
            for (std::size_t j = 0; j < set.n_classes; ++j) {
                if (!f[1 + j].starts_with("target:") || !f[1 + set.n_classes + j].starts_with("prob:")) {
                    throw EvalError(path.string() + ": malformed header");
                }
                set.labels.push_back(f[1 + j].substr(7));
            }
            continue;
        }
        if (f.size() != 1 + 2 * set.n_classes) {
            throw EvalError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                            std::to_string(1 + 2 * set.n_classes) + " fields");
        }
        set.ids.push_back(f[0]);
        for (std::size_t j = 0; j < set.n_classes; ++j) {
            if (f[1 + j] != "0" && f[1 + j] != "1") throw EvalError(path.string() + ":" + std::to_string(line_no) + ": bad target");
            set.targets.push_back(f[1 + j] == "1" ? 1 : 0);
        }
        for (std::size_t j = 0; j < set.n_classes; ++j) {
            char* end = nullptr;
            const double v = std::strtod(f[1 + set.n_classes + j].c_str(), &end);
            if (end == f[1 + set.n_classes + j].c_str()) throw EvalError(path.string() + ":" + std::to_string(line_no) + ": bad probability");
            set.probabilities.push_back(v);
        }
    }
    if (!header) throw EvalError(path.string() + ": missing header");
    set.validate();
    return set;
}

std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> targets) {
    if (scores.size() != targets.size()) throw EvalError("auc: scores and targets differ in length");
    std::vector<double> s(scores.begin(), scores.end());
    std::vector<std::uint8_t> t(targets.begin(), targets.end());
    return weighted_auc(rank_label(s), t, std::vector<double>(s.size(), 1.0));
}

MacroAuc macro_auc(const PredictionSet& set) {
    set.validate();
    MacroAuc m;
    double total = 0.0;
    std::size_t valid = 0;
    for (std::size_t j = 0; j < set.n_classes; ++j) {
        const auto a = auc(set.class_scores(j), set.class_targets(j));
        m.per_label.push_back(a);
        if (a) {
            total += *a;
            ++valid;
        } else {
            m.warnings.push_back("label " + (set.labels.empty() ? std::to_string(j) : set.labels[j]) +
                                 " has a single class; excluded from the macro mean");
        }
    }
    if (valid == 0) throw EvalError("no label has both positive and negative records");
    m.macro = total / static_cast<double>(valid);
    return m;
}

double percentile(std::vector<double> values, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw EvalError("percentile outside [0, 1]");
    std::sort(values.begin(), values.end());
    return lower_percentile(values, p);
}

std::pair<double, double> central_interval(const std::vector<double>& values, double tail) {
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> negated(sorted.rbegin(), sorted.rend());
    for (double& v : negated) v = -v;
    return {lower_percentile(sorted, tail), -lower_percentile(negated, tail)};
}

BootstrapReport bootstrap_compare(const PredictionSet& a, const PredictionSet& b, std::size_t n_iter,
                                  std::uint64_t seed, std::size_t jobs) {
    a.validate();
    b.validate();
    if (a.ids != b.ids) throw EvalError("bootstrap_compare: record ids differ between the prediction sets");
    if (a.targets != b.targets || a.n_classes != b.n_classes) {
        throw EvalError("bootstrap_compare: targets differ between the prediction sets");
    }
    if (n_iter == 0) throw EvalError("bootstrap needs at least one iteration");
    const std::size_t n = a.size(), k = a.n_classes;

    std::vector<RankedLabel> rank_a, rank_b;
    std::vector<std::vector<std::uint8_t>> targets;
    for (std::size_t j = 0; j < k; ++j) {
        rank_a.push_back(rank_label(a.class_scores(j)));
        rank_b.push_back(rank_label(b.class_scores(j)));
        targets.push_back(a.class_targets(j));
    }

    // diff[i][j]: label j in iteration i (NaN when skipped); macro[i] likewise.
    std::vector<std::vector<double>> diff(n_iter, std::vector<double>(k, std::nan("")));
    std::vector<double> macro(n_iter, std::nan(""));
    parallel_for(n_iter, jobs, [&](std::size_t it) {
        Rng rng = make_rng(seed, {it});
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::vector<double> weights(n, 0.0);
        for (std::size_t s = 0; s < n; ++s) weights[pick(rng)] += 1.0;
        double sum_a = 0.0, sum_b = 0.0;
        std::size_t valid = 0;
        for (std::size_t j = 0; j < k; ++j) {
            const auto ua = weighted_auc(rank_a[j], targets[j], weights);
            if (!ua) continue;
            const auto ub = weighted_auc(rank_b[j], targets[j], weights);
            diff[it][j] = *ua - *ub;
            sum_a += *ua;
            sum_b += *ub;
            ++valid;
        }
        if (valid > 0) macro[it] = sum_a / static_cast<double>(valid) - sum_b / static_cast<double>(valid);
    });

    BootstrapReport report;
    report.n_iter = n_iter;
    report.seed = seed;
    report.labels = a.labels;
    report.model_a = a.model_id;
    report.model_b = b.model_id;
    const std::vector<double> ones(n, 1.0);
    double point_a = 0.0, point_b = 0.0;
    std::size_t point_valid = 0;
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<double> d;
        for (std::size_t it = 0; it < n_iter; ++it)
            if (!std::isnan(diff[it][j])) d.push_back(diff[it][j]);
        const auto pa = weighted_auc(rank_a[j], targets[j], ones);
        const auto pb = weighted_auc(rank_b[j], targets[j], ones);
        if (pa) {
            point_a += *pa;
            point_b += *pb;
            ++point_valid;
        }
        report.per_label.push_back(summarize(pa ? *pa - *pb : std::nan(""), d));
    }
    std::vector<double> m;
    for (double v : macro)
        if (!std::isnan(v)) m.push_back(v);
    const double macro_point = point_valid ? point_a / static_cast<double>(point_valid) - point_b / static_cast<double>(point_valid)
                                           : std::nan("");
    report.macro = summarize(macro_point, m);
    return report;
}

nlohmann::json to_json(const BootstrapReport& report) {
    nlohmann::json labels = nlohmann::json::array();
    for (std::size_t j = 0; j < report.per_label.size(); ++j) {
        nlohmann::json entry = to_json(report.per_label[j]);
        entry["label"] = j < report.labels.size() ? report.labels[j] : std::to_string(j);
        labels.push_back(entry);
    }
    return {{"n_iter", report.n_iter},
            {"seed", report.seed},
            {"model_a", report.model_a},
            {"model_b", report.model_b},
            {"difference", "auc(a) - auc(b)"},
            {"ci", "empirical 2.5/97.5 percentiles; significant iff the interval excludes zero"},
            {"degenerate_labels", "labels lacking positives or negatives in a draw are skipped in that iteration"},
            {"macro", to_json(report.macro)},
            {"labels", labels}};
}

BootstrapReport report_from_json(const nlohmann::json& j) {
    BootstrapReport r;
    r.n_iter = j.at("n_iter").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.model_a = j.value("model_a", "");
    r.model_b = j.value("model_b", "");
    r.macro = summary_from_json(j.at("macro"));
    for (const auto& entry : j.at("labels")) {
        r.labels.push_back(entry.at("label").get<std::string>());
        r.per_label.push_back(summary_from_json(entry));
    }
    return r;
}

std::string to_string(Verdict v) {
    switch (v) {
    case Verdict::better: return "better";
    case Verdict::worse: return "worse";
    case Verdict::none: return "none";
    }
    return "none";
}

MultiRunReport summarize_comparisons(std::vector<BootstrapReport> comparisons, double threshold) {
    if (!(threshold > 0.4)) throw EvalError("threshold must exceed 0.4, got " + format_number(threshold));
    if (threshold > 1.0) throw EvalError("threshold must not exceed 1");
    if (comparisons.empty()) throw EvalError("no comparisons to summarize");
    MultiRunReport report;
    report.threshold = threshold;
    report.labels = comparisons.front().labels;
    const std::size_t k = comparisons.front().per_label.size();
    for (std::size_t j = 0; j < k; ++j) {
        std::vector<int> verdicts;
        std::vector<double> medians;
        for (const auto& c : comparisons) {
            verdicts.push_back(c.per_label.at(j).verdict);
            medians.push_back(c.per_label.at(j).median);
        }
        report.per_label.push_back(count_verdicts(verdicts, medians, threshold));
    }
    std::vector<int> verdicts;
    std::vector<double> medians;
    for (const auto& c : comparisons) {
        verdicts.push_back(c.macro.verdict);
        medians.push_back(c.macro.median);
    }
    report.macro = count_verdicts(verdicts, medians, threshold);
    report.comparisons = std::move(comparisons);
    return report;
}

MultiRunReport multi_run_verdict(const std::vector<PredictionSet>& runs_a, const std::vector<PredictionSet>& runs_b,
                                 double threshold, std::size_t n_iter, std::uint64_t seed, std::size_t jobs) {
    if (!(threshold > 0.4)) throw EvalError("threshold must exceed 0.4, got " + format_number(threshold));
    if (runs_a.empty() || runs_b.empty()) throw EvalError("need at least one run per model");
    const std::size_t na = runs_a.size(), nb = runs_b.size();
    std::vector<BootstrapReport> comparisons(na * nb);
    parallel_for(na * nb, jobs, [&](std::size_t idx) {
        const std::size_t i = idx / nb, j = idx % nb;
        Rng rng = make_rng(seed, {i, j});
        comparisons[idx] = bootstrap_compare(runs_a[i], runs_b[j], n_iter, rng(), 1);
    });
    return summarize_comparisons(std::move(comparisons), threshold);
}

nlohmann::json to_json(const MultiRunReport& report, bool include_comparisons) {
    nlohmann::json labels = nlohmann::json::array();
    for (std::size_t j = 0; j < report.per_label.size(); ++j) {
        nlohmann::json entry = to_json(report.per_label[j]);
        entry["label"] = j < report.labels.size() ? report.labels[j] : std::to_string(j);
        labels.push_back(entry);
    }
    nlohmann::json out = {{"threshold", report.threshold},
                          {"n_comparisons", report.comparisons.size()},
                          {"macro", to_json(report.macro)},
                          {"labels", labels}};
    if (include_comparisons) {
        out["comparisons"] = nlohmann::json::array();
        for (const auto& c : report.comparisons) out["comparisons"].push_back(to_json(c));
    }
    return out;
}

void write_curve(const fs::path& path, const std::vector<CurvePoint>& points, const std::string& title) {
    std::ofstream out(path);
    if (!out) throw EvalError("cannot write " + path.string());
    if (!title.empty()) out << "# " << title << '\n';
    out << "# label x y low high\n";
    for (const auto& p : points) {
        std::string label = p.label.empty() ? "-" : p.label;
        std::replace_if(label.begin(), label.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); }, '_');
        out << label << ' ' << format_number(p.x) << ' ' << format_number(p.y) << ' ' << format_number(p.low) << ' '
            << format_number(p.high) << '\n';
    }
    if (!out) throw EvalError("failed writing " + path.string());
}

std::vector<CurvePoint> read_curve(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw EvalError("cannot open curve file " + path.string());
    std::vector<CurvePoint> points;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        CurvePoint p;
        std::string x, y, lo, hi;
        if (!(ss >> p.label >> x >> y >> lo >> hi)) throw EvalError("malformed curve line: " + line);
        p.x = std::stod(x);
        p.y = std::stod(y);
        p.low = std::stod(lo);
        p.high = std::stod(hi);
        if (p.label == "-") p.label.clear();
        points.push_back(p);
    }
    return points;
}

void write_svg(const fs::path& path, const std::vector<CurvePoint>& points, const std::string& title,
               const std::string& x_label, const std::string& y_label, bool bars) {
    if (points.empty()) throw EvalError("nothing to plot");
    const double width = 640, height = 400, left = 70, right = 20, top = 40, bottom = 60;
    double ymin = 0.0, ymax = 0.0, xmin = points.front().x, xmax = points.front().x;
    for (const auto& p : points) {
        ymin = std::min({ymin, p.y, p.low});
        ymax = std::max({ymax, p.y, p.high});
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
    }
    if (!bars) ymin = std::min(ymin, ymax);
    if (ymax == ymin) ymax = ymin + 1.0;
    if (xmax == xmin) xmax = xmin + 1.0;
    const double pw = width - left - right, ph = height - top - bottom;
    auto sx = [&](std::size_t i, double x) {
        return bars ? left + pw * (static_cast<double>(i) + 0.5) / static_cast<double>(points.size())
                    : left + pw * (x - xmin) / (xmax - xmin);
    };
    auto sy = [&](double y) { return top + ph * (1.0 - (y - ymin) / (ymax - ymin)); };

    std::ofstream out(path);
    if (!out) throw EvalError("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n"
        << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
        << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">" << x_label
        << "</text>\n"
        << "<text x=\"15\" y=\"" << top + ph / 2 << "\" transform=\"rotate(-90 15 " << top + ph / 2
        << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
    for (double frac : {0.0, 0.5, 1.0}) {
        const double y = ymin + frac * (ymax - ymin);
        out << "<text x=\"" << left - 6 << "\" y=\"" << sy(y) + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
            << format_number(std::round(y * 1e4) / 1e4) << "</text>\n";
    }
    if (bars) {
        const double bw = 0.6 * pw / static_cast<double>(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto& p = points[i];
            const double x = sx(i, p.x);
            out << "<rect x=\"" << x - bw / 2 << "\" y=\"" << std::min(sy(p.y), sy(0.0)) << "\" width=\"" << bw
                << "\" height=\"" << std::abs(sy(p.y) - sy(0.0)) << "\" fill=\"steelblue\"/>\n"
                << "<line x1=\"" << x << "\" y1=\"" << sy(p.low) << "\" x2=\"" << x << "\" y2=\"" << sy(p.high)
                << "\" stroke=\"black\"/>\n"
                << "<text x=\"" << x << "\" y=\"" << top + ph + 14 << "\" text-anchor=\"middle\" font-size=\"10\">"
                << p.label << "</text>\n";
        }
    } else {
        out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < points.size(); ++i) out << sx(i, points[i].x) << ',' << sy(points[i].y) << ' ';
        out << "\"/>\n";
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto& p = points[i];
            const double x = sx(i, p.x);
            out << "<circle cx=\"" << x << "\" cy=\"" << sy(p.y) << "\" r=\"3\" fill=\"steelblue\"/>\n"
                << "<line x1=\"" << x << "\" y1=\"" << sy(p.low) << "\" x2=\"" << x << "\" y2=\"" << sy(p.high)
                << "\" stroke=\"black\"/>\n"
                << "<text x=\"" << x << "\" y=\"" << top + ph + 14 << "\" text-anchor=\"middle\" font-size=\"10\">"
                << format_number(p.x) << "</text>\n";
        }
    }
    out << "</svg>\n";
}

}  // namespace s4ecg::eval
