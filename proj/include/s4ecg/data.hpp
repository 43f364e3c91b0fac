#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "s4ecg/model.hpp"
#include "s4ecg/random.hpp"

namespace s4ecg::data {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Demographics {
    std::optional<double> age;     // years
    std::optional<double> sex;     // 0 or 1
    std::optional<double> height;  // cm
    std::optional<double> weight;  // kg
};

struct SignalRecord {
    std::string id;
    std::size_t channels = 12;
    std::size_t length = 0;        // samples per channel
    double fs = 100.0;             // Hz
    std::vector<float> signal;     // channel-major, channels * length
    std::vector<std::uint8_t> labels;  // multi-hot over the vocabulary
    Demographics meta;
    int fold = 0;                  // 1..n_folds, 0 when unassigned

    double duration() const { return static_cast<double>(length) / fs; }
    float at(std::size_t channel, std::size_t t) const { return signal[channel * length + t]; }
};

struct LabelVocabulary {
    std::vector<std::string> codes;
    std::vector<std::size_t> counts;  // occurrences over the full dataset

    std::size_t size() const { return codes.size(); }
    std::optional<std::size_t> index_of(const std::string& code) const;
};

struct Dataset {
    LabelVocabulary vocabulary;
    std::vector<SignalRecord> records;
    // Free-form description of how labels were generated (synthetic data).
    std::vector<std::string> notes;

    std::size_t size() const { return records.size(); }
    std::vector<std::size_t> indices_in_folds(const std::vector<int>& folds) const;
    void recount_labels();
};

// Tab-separated manifest with a header row:
//   id  signal_path  fs  duration  labels  age  sex  height  weight  [fold]
// Empty fields are missing values; labels are comma-separated codes. Lines
// starting with '#' are comments; "# vocabulary: a,b,c" fixes the label order
// (codes outside it are rejected) and "# channels: n" overrides the default 12.
// Signal paths are relative to the manifest directory.
Dataset ingest(const std::filesystem::path& manifest);
// Writes <dir>/manifest.tsv and <dir>/signals/<id>.f32.
void export_dataset(const Dataset& dataset, const std::filesystem::path& dir);

void write_signal_file(const std::filesystem::path& path, const std::vector<float>& values);
std::vector<float> read_signal_file(const std::filesystem::path& path, std::size_t expected_values);

struct FoldAssignment {
    std::vector<int> folds;  // per record, 1..n_folds
    std::vector<std::string> warnings;
};

// Iterative stratification: the rarest remaining label is distributed first,
// each record going to the fold that still needs that label most.
FoldAssignment assign_folds(const Dataset& dataset, int n_folds, std::uint64_t seed);
// Applies assign_folds unless every record already carries a fold.
std::vector<std::string> ensure_folds(Dataset& dataset, int n_folds, std::uint64_t seed);

// Drops statements occurring fewer than min_count times in the full dataset.
LabelVocabulary filter_rare_labels(Dataset& dataset, std::size_t min_count);

struct MetadataStats {
    double median_age = 0, median_sex = 0, median_height = 0, median_weight = 0;
    double mean_age = 0, std_age = 1;
    double mean_height = 0, std_height = 1;
    double mean_weight = 0, std_weight = 1;
    std::vector<std::string> warnings;
};

// Medians and z-score statistics from the training folds only.
MetadataStats fit_metadata(const Dataset& dataset, const std::vector<int>& training_folds);
model::MetaFeatures impute_metadata(const Demographics& meta, const MetadataStats& stats);

struct Crop {
    std::size_t start = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    bool padded = false;
    std::vector<double> values;  // channels * width
};

std::size_t window_samples(double window_seconds, double fs);
Crop crop_at(const SignalRecord& record, std::size_t start, std::size_t width);
// Uniform start in [0, L - w]; records shorter than w are zero-padded on the right.
Crop random_crop(const SignalRecord& record, double window_seconds, Rng& rng);
// s_i = round(i (L - w) / (n - 1)).
std::vector<std::size_t> tta_starts(std::size_t length, std::size_t width, std::size_t n);
std::vector<Crop> tta_crops(const SignalRecord& record, double window_seconds, std::size_t n = 10);

struct SynthSpec {
    std::string task = "freq";  // freq | ar | meta | pulse | noise
    std::size_t n_records = 400;
    double fs = 100.0;
    double duration = 10.0;  // seconds
    std::size_t channels = 12;
    std::uint64_t seed = 0;
    double noise = 1.0;  // scales the task's nuisance component
};

std::vector<std::string> synth_tasks();
// Deterministic in (spec); records of the same index share their latent
// parameters across sampling rates for the continuous-time tasks (freq, pulse).
Dataset synth_generate(const SynthSpec& spec);

// Spectral-peak baseline for the freq task: per-class band power of the
// channel-averaged periodogram.
std::vector<double> spectral_band_scores(const SignalRecord& record);

}  // namespace s4ecg::data
