#include "s4ecg/config.hpp"

#include <charconv>
#include <type_traits>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace s4ecg {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return {};
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class Reader {
public:
    explicit Reader(const KeyValues& kv) : m_kv(kv) {}

    template <typename T>
    void read(const std::string& key, T& target) const {
        const auto it = m_kv.find(key);
        if (it == m_kv.end()) return;
        parse(key, it->second, target);
    }

private:
    static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed parsing assumes a 64-bit size_t");

    static void parse(const std::string& key, const std::string& text, std::size_t& out) {
        std::uint64_t v = 0;
        const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc{} || ptr != text.data() + text.size()) fail(key, text);
        out = static_cast<std::size_t>(v);
    }
    static void parse(const std::string& key, const std::string& text, double& out) {
        try {
            std::size_t used = 0;
            out = std::stod(text, &used);
            if (used != text.size()) fail(key, text);
        } catch (const std::logic_error&) {
            fail(key, text);
        }
    }
    static void parse(const std::string& key, const std::string& text, bool& out) {
        if (text == "true" || text == "1") {
            out = true;
        } else if (text == "false" || text == "0") {
            out = false;
        } else {
            fail(key, text);
        }
    }
    static void parse(const std::string&, const std::string& text, std::string& out) { out = text; }
    static void parse(const std::string& key, const std::string& text, Directionality& out) {
        if (text == "causal") {
            out = Directionality::causal;
        } else if (text == "bidirectional") {
            out = Directionality::bidirectional;
        } else {
            fail(key, text);
        }
    }
    static void parse(const std::string& key, const std::string& text, BidirectionalMerge& out) {
        if (text == "concat") {
            out = BidirectionalMerge::concat;
        } else if (text == "sum") {
            out = BidirectionalMerge::sum;
        } else {
            fail(key, text);
        }
    }
    static void parse(const std::string& key, const std::string& text, EncoderKind& out) {
        if (text == "single_conv") {
            out = EncoderKind::single_conv;
        } else if (text == "fce") {
            out = EncoderKind::fce;
        } else {
            fail(key, text);
        }
    }
    static void parse(const std::string& key, const std::string& text, NormKind& out) {
        if (text == "layer") {
            out = NormKind::layer;
        } else if (text == "batch") {
            out = NormKind::batch;
        } else {
            fail(key, text);
        }
    }
    [[noreturn]] static void fail(const std::string& key, const std::string& text) {
        throw ConfigError("invalid value '" + text + "' for key '" + key + "'");
    }

    const KeyValues& m_kv;
};

std::string str(std::size_t v) { return std::to_string(v); }
std::string str(bool v) { return v ? "true" : "false"; }
std::string str(Directionality d) { return d == Directionality::causal ? "causal" : "bidirectional"; }
std::string str(BidirectionalMerge m) { return m == BidirectionalMerge::concat ? "concat" : "sum"; }
std::string str(EncoderKind e) { return e == EncoderKind::single_conv ? "single_conv" : "fce"; }
std::string str(NormKind n) { return n == NormKind::layer ? "layer" : "batch"; }

}  // namespace

KeyValues parse_key_values(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

std::string format_key_values(const KeyValues& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_key_values(buffer.str());
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file " + path.string());
    out << format_key_values(kv);
}

KeyValues with_prefix(const KeyValues& kv, const std::string& prefix) {
    KeyValues out;
    for (const auto& [k, v] : kv) out[prefix + k] = v;
    return out;
}

KeyValues strip_prefix(const KeyValues& kv, const std::string& prefix) {
    KeyValues out;
    for (const auto& [k, v] : kv)
        if (k.starts_with(prefix)) out[k.substr(prefix.size())] = v;
    return out;
}

void ModelConfig::validate() const {
    if (in_channels == 0) throw ConfigError("model.in_channels must be >= 1");
    if (width == 0) throw ConfigError("model.width must be >= 1");
    if (depth == 0) throw ConfigError("model.depth must be >= 1");
    if (state_dim == 0) throw ConfigError("model.state_dim must be >= 1");
    if (n_classes == 0) throw ConfigError("model.n_classes must be >= 1");
    if (encoder_kernel == 0) throw ConfigError("model.encoder_kernel must be >= 1");
    if (encoder == EncoderKind::fce && fce_layers == 0) throw ConfigError("model.fce_layers must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
    if (!(step_min > 0.0 && step_min <= step_max)) throw ConfigError("model.step_min/step_max out of order");
    if (with_meta && (meta_features == 0 || meta_hidden == 0 || meta_layers == 0)) {
        throw ConfigError("meta head dimensions must be >= 1");
    }
}

KeyValues ModelConfig::to_kv() const {
    return {
        {"in_channels", str(in_channels)},
        {"width", str(width)},
        {"depth", str(depth)},
        {"state_dim", str(state_dim)},
        {"n_classes", str(n_classes)},
        {"directionality", str(directionality)},
        {"merge", str(merge)},
        {"encoder", str(encoder)},
        {"encoder_kernel", str(encoder_kernel)},
        {"fce_layers", str(fce_layers)},
        {"dropout", format_double(dropout)},
        {"norm", str(norm)},
        {"with_meta", str(with_meta)},
        {"meta_features", str(meta_features)},
        {"meta_hidden", str(meta_hidden)},
        {"meta_layers", str(meta_layers)},
        {"step_min", format_double(step_min)},
        {"step_max", format_double(step_max)},
        {"train_a", str(train_a)},
        {"train_b", str(train_b)},
        {"train_c", str(train_c)},
        {"train_d", str(train_d)},
        {"train_step", str(train_step)},
    };
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
    ModelConfig c;
    const Reader r(kv);
    r.read("in_channels", c.in_channels);
    r.read("width", c.width);
    r.read("depth", c.depth);
    r.read("state_dim", c.state_dim);
    r.read("n_classes", c.n_classes);
    r.read("directionality", c.directionality);
    r.read("merge", c.merge);
    r.read("encoder", c.encoder);
    r.read("encoder_kernel", c.encoder_kernel);
    r.read("fce_layers", c.fce_layers);
    r.read("dropout", c.dropout);
    r.read("norm", c.norm);
    r.read("with_meta", c.with_meta);
    r.read("meta_features", c.meta_features);
    r.read("meta_hidden", c.meta_hidden);
    r.read("meta_layers", c.meta_layers);
    r.read("step_min", c.step_min);
    r.read("step_max", c.step_max);
    r.read("train_a", c.train_a);
    r.read("train_b", c.train_b);
    r.read("train_c", c.train_c);
    r.read("train_d", c.train_d);
    r.read("train_step", c.train_step);
    c.validate();
    return c;
}

void TrainConfig::validate() const {
    if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("train.lr must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("train.eps must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(crop_seconds > 0.0)) throw ConfigError("train.crop_seconds must be > 0");
    if (loss != "bce_with_logits") throw ConfigError("unsupported loss '" + loss + "'");
    if (tta_crops == 0) throw ConfigError("train.tta_crops must be >= 1");
    if (validation != "tta" && validation != "single" && validation != "none") {
        throw ConfigError("train.validation must be tta, single or none");
    }
}

KeyValues TrainConfig::to_kv() const {
    return {
        {"batch_size", str(batch_size)},
        {"lr", format_double(lr)},
        {"epochs", str(epochs)},
        {"beta1", format_double(beta1)},
        {"beta2", format_double(beta2)},
        {"eps", format_double(eps)},
        {"weight_decay", format_double(weight_decay)},
        {"crop_seconds", format_double(crop_seconds)},
        {"seed", std::to_string(seed)},
        {"loss", loss},
        {"tta_crops", str(tta_crops)},
        {"validation", validation},
    };
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv) {
    TrainConfig c;
    const Reader r(kv);
    r.read("batch_size", c.batch_size);
    r.read("lr", c.lr);
    r.read("epochs", c.epochs);
    r.read("beta1", c.beta1);
    r.read("beta2", c.beta2);
    r.read("eps", c.eps);
    r.read("weight_decay", c.weight_decay);
    r.read("crop_seconds", c.crop_seconds);
    r.read("seed", c.seed);
    r.read("loss", c.loss);
    r.read("tta_crops", c.tta_crops);
    r.read("validation", c.validation);
    c.validate();
    return c;
}

void CpcConfig::validate() const {
    if (in_channels == 0 || encoder_layers == 0 || encoder_width == 0) throw ConfigError("cpc encoder dimensions must be >= 1");
    if (predictor_depth == 0 || state_dim == 0) throw ConfigError("cpc predictor dimensions must be >= 1");
    if (horizon == 0) throw ConfigError("cpc.horizon must be >= 1");
    if (head_hidden == 0) throw ConfigError("cpc.head_hidden must be >= 1");
    if (n_neg == 0) throw ConfigError("cpc.n_neg must be >= 1");
    if (max_anchors == 0) throw ConfigError("cpc.max_anchors must be >= 1");
    if (!(crop_seconds > 0.0)) throw ConfigError("cpc.crop_seconds must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("cpc.dropout must lie in [0, 1)");
}

ModelConfig CpcConfig::model_config(std::size_t n_classes) const {
    ModelConfig m;
    m.in_channels = in_channels;
    m.width = encoder_width;
    m.depth = predictor_depth;
    m.state_dim = state_dim;
    m.n_classes = n_classes;
    m.directionality = Directionality::causal;
    m.encoder = EncoderKind::fce;
    m.encoder_kernel = 1;
    m.fce_layers = encoder_layers;
    m.dropout = dropout;
    m.step_min = step_min;
    m.step_max = step_max;
    return m;
}

KeyValues CpcConfig::to_kv() const {
    return {
        {"in_channels", str(in_channels)},
        {"encoder_layers", str(encoder_layers)},
        {"encoder_width", str(encoder_width)},
        {"predictor_depth", str(predictor_depth)},
        {"state_dim", str(state_dim)},
        {"horizon", str(horizon)},
        {"head_hidden", str(head_hidden)},
        {"n_neg", str(n_neg)},
        {"max_anchors", str(max_anchors)},
        {"cross_batch_negatives", str(cross_batch_negatives)},
        {"crop_seconds", format_double(crop_seconds)},
        {"dropout", format_double(dropout)},
        {"step_min", format_double(step_min)},
        {"step_max", format_double(step_max)},
    };
}

CpcConfig CpcConfig::from_kv(const KeyValues& kv) {
    CpcConfig c;
    const Reader r(kv);
    r.read("in_channels", c.in_channels);
    r.read("encoder_layers", c.encoder_layers);
    r.read("encoder_width", c.encoder_width);
    r.read("predictor_depth", c.predictor_depth);
    r.read("state_dim", c.state_dim);
    r.read("horizon", c.horizon);
    r.read("head_hidden", c.head_hidden);
    r.read("n_neg", c.n_neg);
    r.read("max_anchors", c.max_anchors);
    r.read("cross_batch_negatives", c.cross_batch_negatives);
    r.read("crop_seconds", c.crop_seconds);
    r.read("dropout", c.dropout);
    r.read("step_min", c.step_min);
    r.read("step_max", c.step_max);
    c.validate();
    return c;
}

}  // namespace s4ecg
