#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace s4ecg {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Flat key=value representation used by config files and checkpoint metadata.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);
KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);

enum class Directionality { causal, bidirectional };
enum class BidirectionalMerge { concat, sum };
enum class EncoderKind { single_conv, fce };
enum class NormKind { layer, batch };

struct ModelConfig {
    std::size_t in_channels = 12;
    std::size_t width = 128;  // H
    std::size_t depth = 4;
    std::size_t state_dim = 8;  // N
    std::size_t n_classes = 1;
    Directionality directionality = Directionality::bidirectional;
    BidirectionalMerge merge = BidirectionalMerge::concat;
    EncoderKind encoder = EncoderKind::single_conv;
    std::size_t encoder_kernel = 3;
    std::size_t fce_layers = 4;
    double dropout = 0.2;
    NormKind norm = NormKind::layer;
    bool with_meta = false;
    std::size_t meta_features = 7;
    std::size_t meta_hidden = 64;
    std::size_t meta_layers = 3;
    double step_min = 1e-3;
    double step_max = 1e-1;
    bool train_a = true;
    bool train_b = true;
    bool train_c = true;
    bool train_d = true;
    bool train_step = true;

    bool causal() const { return directionality == Directionality::causal; }
    void validate() const;
    KeyValues to_kv() const;
    static ModelConfig from_kv(const KeyValues& kv);
    bool operator==(const ModelConfig&) const = default;
};

struct TrainConfig {
    std::size_t batch_size = 32;
    double lr = 1e-3;
    std::size_t epochs = 50;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    double crop_seconds = 2.5;
    std::uint64_t seed = 0;
    std::string loss = "bce_with_logits";
    std::size_t tta_crops = 10;
    // Validation after every epoch: "tta", "single" (first TTA crop only) or "none".
    std::string validation = "tta";

    void validate() const;
    KeyValues to_kv() const;
    static TrainConfig from_kv(const KeyValues& kv);
    bool operator==(const TrainConfig&) const = default;
};

struct CpcConfig {
    std::size_t in_channels = 12;
    std::size_t encoder_layers = 4;
    std::size_t encoder_width = 512;
    std::size_t predictor_depth = 4;
    std::size_t state_dim = 8;
    std::size_t horizon = 12;  // K
    std::size_t head_hidden = 512;
    std::size_t n_neg = 16;
    std::size_t max_anchors = 128;
    bool cross_batch_negatives = false;
    double crop_seconds = 10.0;
    double dropout = 0.2;
    double step_min = 1e-3;
    double step_max = 1e-1;

    void validate() const;
    // Architecture of the encoder + predictor viewed as a causal S4 classifier.
    ModelConfig model_config(std::size_t n_classes) const;
    KeyValues to_kv() const;
    static CpcConfig from_kv(const KeyValues& kv);
    bool operator==(const CpcConfig&) const = default;
};

// Prefixes every key ("model.width=..."), and the inverse filter.
KeyValues with_prefix(const KeyValues& kv, const std::string& prefix);
KeyValues strip_prefix(const KeyValues& kv, const std::string& prefix);

}  // namespace s4ecg
