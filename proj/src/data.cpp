#include "s4ecg/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

namespace s4ecg::data {

namespace fs = std::filesystem;

namespace {

const char* const kHeader = "id\tsignal_path\tfs\tduration\tlabels\tage\tsex\theight\tweight\tfold";

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_number(const std::string& text, const std::string& field, const std::string& id) {
    const std::string t = trim(text);
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v)) {
        throw DataError("record " + id + ": malformed " + field + " '" + text + "'");
    }
    return v;
}

std::optional<double> parse_optional(const std::string& text, const std::string& field, const std::string& id) {
    if (trim(text).empty()) return std::nullopt;
    return parse_number(text, field, id);
}

std::string format_number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string format_optional(const std::optional<double>& v) { return v ? format_number(*v) : std::string{}; }

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    if (!(sd > 0.0)) sd = 1.0;
}

}  // namespace

std::optional<std::size_t> LabelVocabulary::index_of(const std::string& code) const {
    const auto it = std::find(codes.begin(), codes.end(), code);
    if (it == codes.end()) return std::nullopt;
    return static_cast<std::size_t>(it - codes.begin());
}

std::vector<std::size_t> Dataset::indices_in_folds(const std::vector<int>& folds) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (std::find(folds.begin(), folds.end(), records[i].fold) != folds.end()) out.push_back(i);
    }
    return out;
}

void Dataset::recount_labels() {
    vocabulary.counts.assign(vocabulary.size(), 0);
    for (const auto& r : records)
        for (std::size_t j = 0; j < r.labels.size(); ++j) vocabulary.counts[j] += r.labels[j];
}

void write_signal_file(const fs::path& path, const std::vector<float>& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * 4));
    } else {
        for (float v : values) {
            auto bits = std::bit_cast<std::uint32_t>(v);
            char bytes[4];
            for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
            out.write(bytes, 4);
        }
    }
    if (!out) throw DataError("failed writing " + path.string());
}

std::vector<float> read_signal_file(const fs::path& path, std::size_t expected_values) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw DataError("cannot open signal file " + path.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes != expected_values * 4) {
        throw DataError("signal file " + path.string() + " holds " + std::to_string(bytes / 4) + " values, expected " +
                        std::to_string(expected_values));
    }
    in.seekg(0);
    std::vector<unsigned char> raw(bytes);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
    std::vector<float> values(expected_values);
    for (std::size_t i = 0; i < expected_values; ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[i * 4 + b]) << (8 * b);
        values[i] = std::bit_cast<float>(bits);
    }
    return values;
}

Dataset ingest(const fs::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw DataError("cannot open manifest " + manifest.string());
    const fs::path base = manifest.parent_path();

    Dataset ds;
    std::optional<std::vector<std::string>> declared;
    std::size_t channels = 12;
    bool header_seen = false;
    std::set<std::string> ids;
    std::vector<std::vector<std::string>> raw_labels;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (line[0] == '#') {
            const std::string body = trim(line.substr(1));
            if (body.starts_with("vocabulary:")) {
                std::vector<std::string> codes;
                for (auto& c : split(trim(body.substr(11)), ','))
                    if (!trim(c).empty()) codes.push_back(trim(c));
                declared = codes;
            } else if (body.starts_with("channels:")) {
                channels = static_cast<std::size_t>(parse_number(body.substr(9), "channels", "manifest"));
                if (channels == 0) throw DataError("manifest declares zero channels");
            } else {
                ds.notes.push_back(body);
            }
            continue;
        }
        if (!header_seen) {
            header_seen = true;
            if (line.starts_with("id\t")) continue;
        }
        const auto f = split(line, '\t');
        const std::string id = f.empty() ? std::string{} : trim(f[0]);
        if (f.size() != 9 && f.size() != 10) {
            throw DataError("record " + (id.empty() ? "at line " + std::to_string(line_no) : id) +
                            ": malformed row with " + std::to_string(f.size()) + " fields");
        }
        if (id.empty()) throw DataError("record at line " + std::to_string(line_no) + ": empty id");
        if (!ids.insert(id).second) throw DataError("record " + id + ": duplicate id");

        SignalRecord r;
        r.id = id;
        r.channels = channels;
        r.fs = parse_number(f[2], "fs", id);
        const double duration = parse_number(f[3], "duration", id);
        if (r.fs <= 0 || duration <= 0) throw DataError("record " + id + ": fs and duration must be positive");
        const double samples = duration * r.fs;
        r.length = static_cast<std::size_t>(std::llround(samples));
        if (std::abs(samples - static_cast<double>(r.length)) > 1e-6 * std::max(1.0, samples)) {
            throw DataError("record " + id + ": duration * fs = " + format_number(samples) + " is not a whole number of samples");
        }
        const fs::path signal_path = base / trim(f[1]);
        try {
            r.signal = read_signal_file(signal_path, channels * r.length);
        } catch (const DataError& e) {
            throw DataError("record " + id + ": length/fs inconsistency: " + e.what());
        }
        r.meta.age = parse_optional(f[5], "age", id);
        r.meta.sex = parse_optional(f[6], "sex", id);
        if (r.meta.sex && *r.meta.sex != 0.0 && *r.meta.sex != 1.0) throw DataError("record " + id + ": sex must be 0 or 1");
        r.meta.height = parse_optional(f[7], "height", id);
        r.meta.weight = parse_optional(f[8], "weight", id);
        if (f.size() == 10 && !trim(f[9]).empty()) {
            const double fold = parse_number(f[9], "fold", id);
            if (fold < 1 || fold != std::floor(fold)) throw DataError("record " + id + ": fold must be a positive integer");
            r.fold = static_cast<int>(fold);
        }
        std::vector<std::string> codes;
        for (auto& c : split(f[4], ','))
            if (!trim(c).empty()) codes.push_back(trim(c));
        raw_labels.push_back(codes);
        ds.records.push_back(std::move(r));
    }

    if (declared) {
        ds.vocabulary.codes = *declared;
    } else {
        std::set<std::string> all;
        for (const auto& codes : raw_labels) all.insert(codes.begin(), codes.end());
        ds.vocabulary.codes.assign(all.begin(), all.end());
    }
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
        auto& r = ds.records[i];
        r.labels.assign(ds.vocabulary.size(), 0);
        for (const auto& code : raw_labels[i]) {
            const auto idx = ds.vocabulary.index_of(code);
            if (!idx) throw DataError("record " + r.id + ": unknown label code '" + code + "'");
            r.labels[*idx] = 1;
        }
    }
    ds.recount_labels();
    return ds;
}

void export_dataset(const Dataset& dataset, const fs::path& dir) {
    fs::create_directories(dir / "signals");
    std::ofstream out(dir / "manifest.tsv");
    if (!out) throw DataError("cannot write manifest in " + dir.string());
    for (const auto& note : dataset.notes) out << "# " << note << '\n';
    out << "# vocabulary: ";
    for (std::size_t j = 0; j < dataset.vocabulary.size(); ++j) out << (j ? "," : "") << dataset.vocabulary.codes[j];
    out << '\n';
    const std::size_t channels = dataset.records.empty() ? 12 : dataset.records.front().channels;
    out << "# channels: " << channels << '\n';
    out << kHeader << '\n';
    for (const auto& r : dataset.records) {
        if (r.channels != channels) throw DataError("record " + r.id + ": channel count differs from the dataset");
        const std::string rel = "signals/" + r.id + ".f32";
        write_signal_file(dir / rel, r.signal);
        std::string labels;
        for (std::size_t j = 0; j < r.labels.size(); ++j)
            if (r.labels[j]) labels += (labels.empty() ? "" : ",") + dataset.vocabulary.codes[j];
        out << r.id << '\t' << rel << '\t' << format_number(r.fs) << '\t' << format_number(r.duration()) << '\t'
            << labels << '\t' << format_optional(r.meta.age) << '\t' << format_optional(r.meta.sex) << '\t'
            << format_optional(r.meta.height) << '\t' << format_optional(r.meta.weight) << '\t'
            << (r.fold > 0 ? std::to_string(r.fold) : std::string{}) << '\n';
    }
    if (!out) throw DataError("failed writing manifest in " + dir.string());
}

FoldAssignment assign_folds(const Dataset& dataset, int n_folds, std::uint64_t seed) {
    if (n_folds < 1) throw DataError("need at least one fold");
    const std::size_t n = dataset.size();
    const std::size_t k = static_cast<std::size_t>(n_folds);
    const std::size_t n_labels = dataset.vocabulary.size();
    Rng rng = make_rng(seed, {0xf01d});

    FoldAssignment result;
    result.folds.assign(n, 0);
    std::vector<double> desired(k, static_cast<double>(n) / static_cast<double>(k));
    std::vector<std::vector<double>> desired_label(n_labels, std::vector<double>(k, 0.0));
    std::vector<std::size_t> total(n_labels, 0);
    for (const auto& r : dataset.records)
        for (std::size_t j = 0; j < n_labels; ++j) total[j] += r.labels[j];
    for (std::size_t j = 0; j < n_labels; ++j) {
        std::fill(desired_label[j].begin(), desired_label[j].end(), static_cast<double>(total[j]) / static_cast<double>(k));
        if (total[j] > 0 && total[j] < k) {
            result.warnings.push_back("label " + dataset.vocabulary.codes[j] + " occurs " + std::to_string(total[j]) +
                                      " times, fewer than the " + std::to_string(k) + " folds");
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> placed(n, false);

    auto place = [&](std::size_t rec, std::optional<std::size_t> label) {
        double best_label = -std::numeric_limits<double>::infinity();
        double best_total = -std::numeric_limits<double>::infinity();
        std::vector<std::size_t> candidates;
        for (std::size_t f = 0; f < k; ++f) {
            const double dl = label ? desired_label[*label][f] : 0.0;
            if (dl > best_label || (dl == best_label && desired[f] > best_total)) {
                best_label = dl;
                best_total = desired[f];
                candidates = {f};
            } else if (dl == best_label && desired[f] == best_total) {
                candidates.push_back(f);
            }
        }
        const std::size_t f = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
        result.folds[rec] = static_cast<int>(f + 1);
        placed[rec] = true;
        desired[f] -= 1.0;
        for (std::size_t j = 0; j < n_labels; ++j)
            if (dataset.records[rec].labels[j]) desired_label[j][f] -= 1.0;
    };

    while (true) {
        std::vector<std::size_t> remaining(n_labels, 0);
        for (std::size_t i = 0; i < n; ++i)
            if (!placed[i])
                for (std::size_t j = 0; j < n_labels; ++j) remaining[j] += dataset.records[i].labels[j];
        std::optional<std::size_t> rarest;
        for (std::size_t j = 0; j < n_labels; ++j)
            if (remaining[j] > 0 && (!rarest || remaining[j] < remaining[*rarest])) rarest = j;
        if (!rarest) break;
        for (std::size_t i : order)
            if (!placed[i] && dataset.records[i].labels[*rarest]) place(i, rarest);
    }
    for (std::size_t i : order)
        if (!placed[i]) place(i, std::nullopt);
    return result;
}

std::vector<std::string> ensure_folds(Dataset& dataset, int n_folds, std::uint64_t seed) {
    const bool all = std::all_of(dataset.records.begin(), dataset.records.end(), [](const auto& r) { return r.fold > 0; });
    if (all) return {};
    const bool any = std::any_of(dataset.records.begin(), dataset.records.end(), [](const auto& r) { return r.fold > 0; });
    FoldAssignment a = assign_folds(dataset, n_folds, seed);
    if (any) a.warnings.push_back("manifest provides folds for only some records; all folds reassigned");
    for (std::size_t i = 0; i < dataset.size(); ++i) dataset.records[i].fold = a.folds[i];
    return a.warnings;
}

LabelVocabulary filter_rare_labels(Dataset& dataset, std::size_t min_count) {
    dataset.recount_labels();
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < dataset.vocabulary.size(); ++j)
        if (dataset.vocabulary.counts[j] >= min_count) keep.push_back(j);
    if (keep.empty()) throw DataError("no label occurs at least " + std::to_string(min_count) + " times");
    LabelVocabulary out;
    for (std::size_t j : keep) {
        out.codes.push_back(dataset.vocabulary.codes[j]);
        out.counts.push_back(dataset.vocabulary.counts[j]);
    }
    for (auto& r : dataset.records) {
        std::vector<std::uint8_t> labels;
        for (std::size_t j : keep) labels.push_back(r.labels[j]);
        r.labels = std::move(labels);
    }
    dataset.vocabulary = out;
    return out;
}

MetadataStats fit_metadata(const Dataset& dataset, const std::vector<int>& training_folds) {
    std::vector<double> age, sex, height, weight;
    std::size_t n_train = 0;
    for (const auto& r : dataset.records) {
        if (std::find(training_folds.begin(), training_folds.end(), r.fold) == training_folds.end()) continue;
        ++n_train;
        if (r.meta.age) age.push_back(*r.meta.age);
        if (r.meta.sex) sex.push_back(*r.meta.sex);
        if (r.meta.height) height.push_back(*r.meta.height);
        if (r.meta.weight) weight.push_back(*r.meta.weight);
    }
    if (n_train == 0) throw DataError("no records in the training folds");
    auto require = [](const std::vector<double>& v, const char* name) {
        if (v.empty()) throw DataError(std::string("metadata column ") + name + " is missing for every training record");
    };
    require(age, "age");
    require(sex, "sex");
    require(height, "height");
    require(weight, "weight");

    MetadataStats s;
    s.median_age = median(age);
    s.median_sex = median(sex);
    s.median_height = median(height);
    s.median_weight = median(weight);
    mean_std(age, s.mean_age, s.std_age);
    mean_std(height, s.mean_height, s.std_height);
    mean_std(weight, s.mean_weight, s.std_weight);
    const std::size_t missing_age = dataset.size() - static_cast<std::size_t>(std::count_if(
        dataset.records.begin(), dataset.records.end(), [](const auto& r) { return r.meta.age.has_value(); }));
    if (missing_age > 0) {
        s.warnings.push_back(std::to_string(missing_age) + " records lack age; imputed with the training median " +
                             format_number(s.median_age) + " without a flag");
    }
    return s;
}

model::MetaFeatures impute_metadata(const Demographics& meta, const MetadataStats& stats) {
    model::MetaFeatures f;
    const double age = meta.age.value_or(stats.median_age);
    const double sex = meta.sex.value_or(stats.median_sex);
    const double height = meta.height.value_or(stats.median_height);
    const double weight = meta.weight.value_or(stats.median_weight);
    f.values = {(age - stats.mean_age) / stats.std_age,
                sex,
                (height - stats.mean_height) / stats.std_height,
                (weight - stats.mean_weight) / stats.std_weight,
                meta.sex ? 0.0 : 1.0,
                meta.height ? 0.0 : 1.0,
                meta.weight ? 0.0 : 1.0};
    return f;
}

std::size_t window_samples(double window_seconds, double fs) {
    if (!(window_seconds > 0) || !(fs > 0)) throw DataError("window and sampling rate must be positive");
    const auto w = static_cast<std::size_t>(std::llround(window_seconds * fs));
    if (w == 0) throw DataError("window of " + format_number(window_seconds) + " s is shorter than one sample");
    return w;
}

Crop crop_at(const SignalRecord& record, std::size_t start, std::size_t width) {
    Crop c;
    c.start = start;
    c.width = width;
    c.channels = record.channels;
    c.values.assign(record.channels * width, 0.0);
    const std::size_t avail = start < record.length ? std::min(width, record.length - start) : 0;
    c.padded = avail < width;
    for (std::size_t ch = 0; ch < record.channels; ++ch)
        for (std::size_t t = 0; t < avail; ++t) c.values[ch * width + t] = record.at(ch, start + t);
    return c;
}

Crop random_crop(const SignalRecord& record, double window_seconds, Rng& rng) {
    const std::size_t w = window_samples(window_seconds, record.fs);
    std::size_t start = 0;
    if (record.length > w) start = std::uniform_int_distribution<std::size_t>(0, record.length - w)(rng);
    return crop_at(record, start, w);
}

std::vector<std::size_t> tta_starts(std::size_t length, std::size_t width, std::size_t n) {
    if (n == 0) throw DataError("need at least one crop");
    std::vector<std::size_t> starts(n, 0);
    if (length <= width || n == 1) return starts;
    const double span = static_cast<double>(length - width);
    for (std::size_t i = 0; i < n; ++i)
        starts[i] = static_cast<std::size_t>(std::lround(static_cast<double>(i) * span / static_cast<double>(n - 1)));
    return starts;
}

std::vector<Crop> tta_crops(const SignalRecord& record, double window_seconds, std::size_t n) {
    const std::size_t w = window_samples(window_seconds, record.fs);
    std::vector<Crop> crops;
    for (std::size_t s : tta_starts(record.length, w, n)) crops.push_back(crop_at(record, s, w));
    return crops;
}

// ---------------------------------------------------------------------------
// Synthetic tasks

namespace {

struct Band {
    double lo, hi;
};
constexpr Band kFreqBands[] = {{1.0, 2.0}, {3.0, 4.5}, {5.5, 8.0}};
constexpr double kPulseRates[][2] = {{45, 60}, {70, 85}, {95, 110}};  // beats per minute

struct Sinusoid {
    double amplitude, freq, phase;
};

// Sum of slow random sinusoids per channel: the band-limited nuisance signal.
std::vector<std::vector<Sinusoid>> nuisance(std::size_t channels, double scale, Rng& rng) {
    std::uniform_real_distribution<double> freq(0.3, 9.5), phase(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> amp(0.0, 0.35 * scale);
    std::vector<std::vector<Sinusoid>> out(channels);
    for (auto& ch : out)
        for (int i = 0; i < 8; ++i) ch.push_back({amp(rng), freq(rng), phase(rng)});
    return out;
}

double eval_sinusoids(const std::vector<Sinusoid>& parts, double t) {
    double v = 0.0;
    for (const auto& s : parts) v += s.amplitude * std::sin(2.0 * std::numbers::pi * s.freq * t + s.phase);
    return v;
}

void fill_freq(SignalRecord& r, std::size_t cls, double noise, Rng& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double f = kFreqBands[cls].lo + (kFreqBands[cls].hi - kFreqBands[cls].lo) * u01(rng);
    std::vector<Sinusoid> main(r.channels);
    for (auto& s : main) s = {0.5 + u01(rng), f, 2.0 * std::numbers::pi * u01(rng)};
    const auto extra = nuisance(r.channels, noise, rng);
    for (std::size_t c = 0; c < r.channels; ++c)
        for (std::size_t t = 0; t < r.length; ++t) {
            const double time = static_cast<double>(t) / r.fs;
            r.signal[c * r.length + t] = static_cast<float>(eval_sinusoids({main[c]}, time) + eval_sinusoids(extra[c], time));
        }
}

void fill_ar(SignalRecord& r, std::size_t cls, double noise, Rng& rng) {
    // AR(2) resonators at 3, 4 or 5 Hz (defined at 100 Hz) with random damping.
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double f0 = 3.0 + static_cast<double>(cls) + 0.6 * (u01(rng) - 0.5);
    const double theta = 2.0 * std::numbers::pi * f0 / 100.0;
    const double radius = 0.92 + 0.05 * u01(rng);
    const double a1 = 2.0 * radius * std::cos(theta), a2 = -radius * radius;
    // Stationary variance of the AR(2) process for unit innovations.
    const double var = (1.0 - a2) / ((1.0 + a2) * ((1.0 - a2) * (1.0 - a2) - a1 * a1));
    const double norm = 1.0 / std::sqrt(var);
    for (std::size_t c = 0; c < r.channels; ++c) {
        double x1 = 0.0, x2 = 0.0;
        const double gain = 0.5 + u01(rng);
        for (std::size_t t = 0; t < r.length + 200; ++t) {
            const double x = a1 * x1 + a2 * x2 + normal(rng);
            x2 = x1;
            x1 = x;
            if (t >= 200) {
                r.signal[c * r.length + t - 200] = static_cast<float>(gain * norm * x + 0.3 * noise * normal(rng));
            }
        }
    }
}

void fill_pulse(SignalRecord& r, std::size_t cls, double noise, Rng& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double bpm = kPulseRates[cls][0] + (kPulseRates[cls][1] - kPulseRates[cls][0]) * u01(rng);
    const double rr = 60.0 / bpm;
    std::vector<double> beats;
    for (double t = -rr * u01(rng); t < r.duration() + rr; t += rr * (1.0 + 0.03 * normal(rng))) beats.push_back(t);
    std::vector<double> gain(r.channels);
    for (double& g : gain) g = 0.5 + u01(rng);
    const auto wander = nuisance(r.channels, 0.4 * noise, rng);
    for (std::size_t c = 0; c < r.channels; ++c)
        for (std::size_t t = 0; t < r.length; ++t) {
            const double time = static_cast<double>(t) / r.fs;
            double v = 0.0;
            for (double b : beats) {
                const double dq = (time - b) / 0.02, dt = (time - b - 0.25) / 0.06;
                v += std::exp(-0.5 * dq * dq) + 0.3 * std::exp(-0.5 * dt * dt);
            }
            r.signal[c * r.length + t] = static_cast<float>(gain[c] * v + eval_sinusoids(wander[c], time));
        }
}

void fill_noise(SignalRecord& r, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (float& v : r.signal) v = static_cast<float>(normal(rng));
}

}  // namespace

std::vector<std::string> synth_tasks() { return {"freq", "ar", "meta", "pulse", "noise"}; }

Dataset synth_generate(const SynthSpec& spec) {
    const auto tasks = synth_tasks();
    if (std::find(tasks.begin(), tasks.end(), spec.task) == tasks.end()) {
        throw DataError("unknown synthetic task '" + spec.task + "'");
    }
    if (spec.n_records == 0 || spec.channels == 0) throw DataError("synthetic dataset needs records and channels");
    const std::size_t length = window_samples(spec.duration, spec.fs);

    Dataset ds;
    ds.notes.push_back("task: " + spec.task);
    if (spec.task == "freq") {
        ds.vocabulary.codes = {"band_1_2hz", "band_3_4.5hz", "band_5.5_8hz"};
        ds.notes.push_back("label: one band per record; every lead is a sinusoid at a frequency drawn uniformly in the band");
        ds.notes.push_back("nuisance: eight random sinusoids per lead in 0.3-9.5 Hz, amplitude N(0, 0.35 * noise)");
    } else if (spec.task == "ar") {
        ds.vocabulary.codes = {"ar_3hz", "ar_4hz", "ar_5hz"};
        ds.notes.push_back("label: AR(2) resonance at 3, 4 or 5 Hz (+-0.3 Hz), pole radius in [0.92, 0.97], per-sample recursion");
    } else if (spec.task == "meta") {
        ds.vocabulary.codes = {"fast_rhythm", "sex_linked"};
        ds.notes.push_back("label fast_rhythm: freq-task signal drawn from the 5.5-8 Hz band instead of 1-2 Hz");
        ds.notes.push_back("label sex_linked: Bernoulli(0.9) when sex = 1, Bernoulli(0.1) otherwise, independent of the signal");
        ds.notes.push_back("missing: sex 5%, height 30%, weight 20%");
    } else if (spec.task == "pulse") {
        ds.vocabulary.codes = {"rate_45_60", "rate_70_85", "rate_95_110"};
        ds.notes.push_back("label: beat rate class; Gaussian QRS-like and T-like pulses with 3% RR jitter plus slow wander");
    } else {
        ds.notes.push_back("white Gaussian noise, no labels");
    }
    ds.notes.push_back("fs: " + format_number(spec.fs) + ", duration: " + format_number(spec.duration) +
                       ", seed: " + std::to_string(spec.seed) + ", noise: " + format_number(spec.noise));

    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < spec.n_records; ++i) {
        // Latent parameters depend on (seed, index) only, not on fs.
        Rng rng = make_rng(spec.seed, {0x5e7, i});
        SignalRecord r;
        char id[32];
        std::snprintf(id, sizeof id, "rec%05zu", i);
        r.id = id;
        r.channels = spec.channels;
        r.fs = spec.fs;
        r.length = length;
        r.signal.assign(spec.channels * length, 0.0f);
        r.labels.assign(ds.vocabulary.size(), 0);
        const std::size_t cls = i % 3;

        const double sex = u01(rng) < 0.5 ? 0.0 : 1.0;
        const double age = std::clamp(60.0 + 15.0 * normal(rng), 18.0, 95.0);
        const double height = 165.0 + 12.0 * sex + 7.0 * normal(rng);
        const double weight = 70.0 + 12.0 * sex + 12.0 * normal(rng);
        r.meta.age = std::round(age);
        r.meta.sex = sex;
        r.meta.height = std::round(height);
        r.meta.weight = std::round(weight);

        if (spec.task == "freq") {
            r.labels[cls] = 1;
            fill_freq(r, cls, spec.noise, rng);
        } else if (spec.task == "ar") {
            r.labels[cls] = 1;
            fill_ar(r, cls, spec.noise, rng);
        } else if (spec.task == "pulse") {
            r.labels[cls] = 1;
            fill_pulse(r, cls, spec.noise, rng);
        } else if (spec.task == "meta") {
            const bool fast = u01(rng) < 0.5;
            r.labels[0] = fast ? 1 : 0;
            r.labels[1] = u01(rng) < (sex == 1.0 ? 0.9 : 0.1) ? 1 : 0;
            fill_freq(r, fast ? 2 : 0, spec.noise, rng);
            if (u01(rng) < 0.05) r.meta.sex.reset();
            if (u01(rng) < 0.30) r.meta.height.reset();
            if (u01(rng) < 0.20) r.meta.weight.reset();
        } else {
            fill_noise(r, rng);
        }
        ds.records.push_back(std::move(r));
    }
    ds.recount_labels();
    ensure_folds(ds, 10, spec.seed);
    return ds;
}

std::vector<double> spectral_band_scores(const SignalRecord& record) {
    // Direct DFT on a 0.05 Hz grid inside each band; channels averaged in power.
    std::vector<double> scores;
    for (const auto& band : kFreqBands) {
        double best = 0.0;
        for (double f = band.lo; f <= band.hi + 1e-9; f += 0.05) {
            double power = 0.0;
            for (std::size_t c = 0; c < record.channels; ++c) {
                double re = 0.0, im = 0.0;
                for (std::size_t t = 0; t < record.length; ++t) {
                    const double phase = 2.0 * std::numbers::pi * f * static_cast<double>(t) / record.fs;
                    re += record.at(c, t) * std::cos(phase);
                    im += record.at(c, t) * std::sin(phase);
                }
                power += re * re + im * im;
            }
            best = std::max(best, power);
        }
        scores.push_back(best);
    }
    return scores;
}

}  // namespace s4ecg::data
