#include "s4ecg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace s4ecg::checkpoint {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

json encode_state(const train::ModelState& state) {
    json out = json::object();
    for (const auto& [name, values] : state.values) {
        std::vector<std::uint8_t> bytes(values.size() * sizeof(double));
        std::memcpy(bytes.data(), values.data(), bytes.size());
        json entry;
        entry["data"] = json::binary(std::move(bytes));
        const auto sh = state.shapes.find(name);
        entry["shape"] = sh == state.shapes.end() ? ad::Shape{values.size()} : sh->second;
        out[name] = std::move(entry);
    }
    return out;
}

train::ModelState decode_state(const json& j) {
    train::ModelState state;
    for (const auto& [name, entry] : j.items()) {
        const auto& bytes = entry.at("data").get_binary();
        if (bytes.size() % sizeof(double) != 0) throw CheckpointError("tensor " + name + " has a truncated blob");
        std::vector<double> values(bytes.size() / sizeof(double));
        std::memcpy(values.data(), bytes.data(), bytes.size());
        const auto shape = entry.at("shape").get<ad::Shape>();
        if (ad::numel(shape) != values.size()) throw CheckpointError("tensor " + name + " shape disagrees with its data");
        state.values[name] = std::move(values);
        state.shapes[name] = shape;
    }
    return state;
}

}  // namespace

void save(const std::filesystem::path& path, const Checkpoint& ckpt) {
    json j;
    j["format"] = "s4ecg-checkpoint";
    j["version"] = kFormatVersion;
    j["kind"] = ckpt.kind;
    j["model_config"] = ckpt.model_config;
    j["train_config"] = ckpt.train_config;
    j["cpc_config"] = ckpt.cpc_config;
    j["seed"] = ckpt.seed;
    j["epoch"] = ckpt.epoch;
    j["state"] = encode_state(ckpt.state);
    j["extra"] = encode_state(ckpt.extra);
    const auto bytes = json::to_cbor(j);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    json j;
    try {
        j = json::from_cbor(bytes);
    } catch (const json::exception& e) {
        throw CheckpointError(path.string() + " is not a checkpoint: " + e.what());
    }
    if (j.value("format", "") != "s4ecg-checkpoint") throw CheckpointError(path.string() + " is not a checkpoint");
    if (j.at("version").get<int>() != kFormatVersion) {
        throw CheckpointError(path.string() + " has format version " + std::to_string(j.at("version").get<int>()) +
                              ", expected " + std::to_string(kFormatVersion));
    }
    try {
        Checkpoint c;
        c.kind = j.at("kind").get<std::string>();
        c.model_config = j.at("model_config").get<KeyValues>();
        c.train_config = j.at("train_config").get<KeyValues>();
        c.cpc_config = j.at("cpc_config").get<KeyValues>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.epoch = j.at("epoch").get<std::size_t>();
        c.state = decode_state(j.at("state"));
        c.extra = decode_state(j.at("extra"));
        return c;
    } catch (const json::exception& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

Checkpoint from_model(model::S4Classifier& m, const TrainConfig& train, std::uint64_t seed, std::size_t epoch,
                      const std::optional<train::ModelState>& state) {
    Checkpoint c;
    c.model_config = m.config().to_kv();
    c.train_config = train.to_kv();
    c.seed = seed;
    c.epoch = epoch;
    c.state = state ? *state : train::snapshot(m);
    return c;
}

model::S4Classifier to_model(const Checkpoint& ckpt) {
    if (ckpt.kind != "supervised") throw CheckpointError("expected a supervised checkpoint, got " + ckpt.kind);
    model::S4Classifier m(ModelConfig::from_kv(ckpt.model_config), ckpt.seed);
    try {
        train::restore(m, ckpt.state);
    } catch (const train::TrainError& e) {
        throw CheckpointError(std::string("architecture mismatch: ") + e.what());
    }
    return m;
}

}  // namespace s4ecg::checkpoint
