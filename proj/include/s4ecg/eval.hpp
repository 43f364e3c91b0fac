#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace s4ecg::eval {

class EvalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PredictionSet {
    std::vector<std::string> ids;
    std::vector<std::string> labels;   // class codes, may be empty
    std::size_t n_classes = 0;
    std::vector<double> probabilities;  // record-major, size() * n_classes
    std::vector<std::uint8_t> targets;  // same layout
    std::string model_id;
    std::uint64_t seed = 0;
    double sampling_rate = 0.0;

    std::size_t size() const { return ids.size(); }
    double probability(std::size_t record, std::size_t cls) const { return probabilities[record * n_classes + cls]; }
    std::uint8_t target(std::size_t record, std::size_t cls) const { return targets[record * n_classes + cls]; }
    std::vector<double> class_scores(std::size_t cls) const;
    std::vector<std::uint8_t> class_targets(std::size_t cls) const;
    void validate() const;
};

// Tab-separated: comment lines for provenance, a header row, then
// id, target:<label>..., prob:<label>... per record.
void write_predictions(const std::filesystem::path& path, const PredictionSet& set);
PredictionSet read_predictions(const std::filesystem::path& path);

// Mann-Whitney AUC with half credit for ties; nullopt when only one class is present.
std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> targets);

struct MacroAuc {
    double macro = 0.0;
    std::vector<std::optional<double>> per_label;
    std::vector<std::string> warnings;
};

MacroAuc macro_auc(const PredictionSet& set);

// Linear-interpolation percentile.
double percentile(std::vector<double> values, double p);
// (tail, 1 - tail) percentiles; the upper one is evaluated as -percentile(-x, tail)
// so negating the data negates and swaps the interval bit for bit.
std::pair<double, double> central_interval(const std::vector<double>& values, double tail);

struct DifferenceSummary {
    double point = 0.0;  // difference on the original test set
    double median = 0.0;
    double q25 = 0.0, q75 = 0.0;
    double ci_low = 0.0, ci_high = 0.0;  // 2.5 / 97.5 percentiles
    int verdict = 0;                     // +1 a better, -1 a worse, 0 not significant
    std::size_t valid_iterations = 0;
};

struct BootstrapReport {
    std::size_t n_iter = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> labels;
    std::vector<DifferenceSummary> per_label;  // AUC(a) - AUC(b)
    DifferenceSummary macro;
    std::string model_a, model_b;
};

// Paired bootstrap: each iteration draws record indices with replacement and
// applies the same draw to both sets. Labels without both classes in a draw are
// skipped in that iteration. Iteration i uses make_rng(seed, {i}).
BootstrapReport bootstrap_compare(const PredictionSet& a, const PredictionSet& b, std::size_t n_iter = 1000,
                                  std::uint64_t seed = 0, std::size_t jobs = 1);

nlohmann::json to_json(const BootstrapReport& report);
BootstrapReport report_from_json(const nlohmann::json& j);

enum class Verdict { better, worse, none };
std::string to_string(Verdict v);

struct RunComparison {
    Verdict verdict = Verdict::none;
    std::size_t n_better = 0, n_worse = 0, n_comparisons = 0;
    double median_of_medians = 0.0;
    double q25 = 0.0, q75 = 0.0;  // spread of the per-comparison medians
};

struct MultiRunReport {
    double threshold = 0.6;
    std::vector<std::string> labels;
    std::vector<RunComparison> per_label;
    RunComparison macro;
    std::vector<BootstrapReport> comparisons;  // row-major over (run a, run b)
};

// Better iff at least threshold * n_comparisons comparisons are significantly
// better (worse likewise); neither when both or none qualify. threshold > 0.4.
MultiRunReport summarize_comparisons(std::vector<BootstrapReport> comparisons, double threshold);
// All n_a * n_b bootstrap comparisons; pair (i, j) uses seed make_rng(seed, {i, j})().
MultiRunReport multi_run_verdict(const std::vector<PredictionSet>& runs_a, const std::vector<PredictionSet>& runs_b,
                                 double threshold = 0.6, std::size_t n_iter = 1000, std::uint64_t seed = 0,
                                 std::size_t jobs = 1);
nlohmann::json to_json(const MultiRunReport& report, bool include_comparisons = false);

struct CurvePoint {
    double x = 0.0;
    double y = 0.0;
    double low = 0.0, high = 0.0;  // error bar
    std::string label;
};

// Whitespace-separated data file readable by gnuplot: label x y low high.
void write_curve(const std::filesystem::path& path, const std::vector<CurvePoint>& points,
                 const std::string& title = {});
std::vector<CurvePoint> read_curve(const std::filesystem::path& path);
// Minimal line or bar chart as SVG.
void write_svg(const std::filesystem::path& path, const std::vector<CurvePoint>& points, const std::string& title,
               const std::string& x_label, const std::string& y_label, bool bars = false);

}  // namespace s4ecg::eval
