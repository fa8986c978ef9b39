#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "natlab/errors.hpp"
#include "natlab/model.hpp"
#include "natlab/tensor.hpp"

namespace natlab {

inline nlohmann::json config_to_json(const ModelConfig& c) {
    nlohmann::json j;
    j["vocab_size"] = c.vocab_size;
    j["d_model"] = c.d_model;
    j["n_heads"] = c.n_heads;
    j["enc_layers"] = c.enc_layers;
    j["dec_layers"] = c.dec_layers;
    j["d_ff"] = c.d_ff;
    j["win"] = c.win;
    j["ccan_layers"] = c.ccan_layers;
    j["max_len"] = c.max_len;
    j["length_offset_range"] = c.length_offset_range;
    j["dropout"] = c.dropout;
    j["seed"] = c.seed;
    j["arch"] = arch_name(c.arch);
    return j;
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::int32_t>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.enc_layers = j.at("enc_layers").get<int>();
    c.dec_layers = j.at("dec_layers").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.win = j.at("win").get<int>();
    c.ccan_layers = j.at("ccan_layers").get<std::vector<int>>();
    c.max_len = j.at("max_len").get<int>();
    c.length_offset_range = j.at("length_offset_range").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.arch = arch_from_name(j.at("arch").get<std::string>());
    c.validate();
    return c;
}

// On-disk model snapshot. The file is one JSON header line (config,
// step, validation score, parameter manifest with byte offsets) followed
// by the little-endian float32 payload in manifest order. Saving a loaded
// checkpoint reproduces the file byte for byte.
struct Checkpoint {
    ModelConfig config;
    std::int64_t step = 0;
    double val_score = -1.0;  // -1 when no validation has run
    std::vector<std::pair<std::string, Tensor<float>>> params;
};

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    nlohmann::json manifest = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, tensor] : ckpt.params) {
        nlohmann::json p;
        p["name"] = name;
        p["shape"] = tensor.shape;
        p["offset"] = offset;
        manifest.push_back(p);
        offset += tensor.numel() * 4;
    }
    nlohmann::json header;
    header["format"] = "natlab-checkpoint-v1";
    header["config"] = config_to_json(ckpt.config);
    header["step"] = ckpt.step;
    header["val_score"] = ckpt.val_score;
    header["payload_bytes"] = offset;
    header["params"] = manifest;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write checkpoint file: " + path);
    f << header.dump() << "\n";
    for (const auto& [name, tensor] : ckpt.params) {
        for (float v : tensor.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            const char bytes[4] = {static_cast<char>(bits & 0xff),
                                   static_cast<char>((bits >> 8) & 0xff),
                                   static_cast<char>((bits >> 16) & 0xff),
                                   static_cast<char>((bits >> 24) & 0xff)};
            f.write(bytes, 4);
        }
    }
    if (!f) throw DataError("failed writing checkpoint payload: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read checkpoint file: " + path);
    std::string header_line;
    if (!std::getline(f, header_line)) throw DataError(path + ": missing checkpoint header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": malformed checkpoint header: " + e.what());
    }
    if (header.value("format", "") != "natlab-checkpoint-v1")
        throw DataError(path + ": not a natlab checkpoint");

    Checkpoint ckpt;
    ckpt.config = config_from_json(header.at("config"));
    ckpt.step = header.at("step").get<std::int64_t>();
    ckpt.val_score = header.at("val_score").get<double>();

    const std::size_t payload_bytes = header.at("payload_bytes").get<std::size_t>();
    std::vector<char> payload(payload_bytes);
    f.read(payload.data(), static_cast<std::streamsize>(payload_bytes));
    if (static_cast<std::size_t>(f.gcount()) != payload_bytes)
        throw DataError(path + ": truncated checkpoint payload");

    for (const auto& p : header.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        const std::vector<std::size_t> shape = p.at("shape").get<std::vector<std::size_t>>();
        const std::size_t offset = p.at("offset").get<std::size_t>();
        Tensor<float> t(shape);
        if (offset + t.numel() * 4 > payload_bytes)
            throw DataError(path + ": manifest entry '" + name + "' overruns payload");
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const unsigned char* b =
                reinterpret_cast<const unsigned char*>(payload.data() + offset + i * 4);
            const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) |
                                       (static_cast<std::uint32_t>(b[1]) << 8) |
                                       (static_cast<std::uint32_t>(b[2]) << 16) |
                                       (static_cast<std::uint32_t>(b[3]) << 24);
            std::memcpy(&t.data[i], &bits, 4);
        }
        ckpt.params.emplace_back(name, std::move(t));
    }
    return ckpt;
}

template <typename T>
Checkpoint snapshot(TransformerModel<T>& model, std::int64_t step, double val_score) {
    Checkpoint ckpt;
    ckpt.config = model.config();
    ckpt.step = step;
    ckpt.val_score = val_score;
    ParamStore<T>& store = model.params();
    for (std::size_t i = 0; i < store.size(); ++i) {
        Tensor<float> t(store[i].value.shape);
        for (std::size_t k = 0; k < t.data.size(); ++k)
            t.data[k] = static_cast<float>(store[i].value.data[k]);
        ckpt.params.emplace_back(store[i].name, std::move(t));
    }
    return ckpt;
}

template <typename T>
void restore(TransformerModel<T>& model, const Checkpoint& ckpt) {
    ParamStore<T>& store = model.params();
    if (store.size() != ckpt.params.size())
        throw DataError("checkpoint parameter count " + std::to_string(ckpt.params.size()) +
                        " does not match model (" + std::to_string(store.size()) + ")");
    for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& [name, tensor] = ckpt.params[i];
        if (store[i].name != name)
            throw DataError("checkpoint parameter '" + name + "' does not match model slot '" +
                            store[i].name + "'");
        if (store[i].value.shape != tensor.shape)
            throw DataError("checkpoint parameter '" + name + "' has shape " +
                            tensor.shape_str() + ", model expects " +
                            store[i].value.shape_str());
        for (std::size_t k = 0; k < tensor.data.size(); ++k)
            store[i].value.data[k] = static_cast<T>(tensor.data[k]);
    }
}

template <typename T>
TransformerModel<T> model_from_checkpoint(const Checkpoint& ckpt) {
    TransformerModel<T> model(ckpt.config);
    restore(model, ckpt);
    return model;
}

// Parameter-wise arithmetic mean; all inputs must share one manifest.
inline Checkpoint average_checkpoints(const std::vector<Checkpoint>& ckpts) {
    if (ckpts.empty()) throw DataError("average_checkpoints: nothing to average");
    Checkpoint out = ckpts[0];
    for (std::size_t c = 1; c < ckpts.size(); ++c) {
        if (ckpts[c].params.size() != out.params.size())
            throw DataError("average_checkpoints: manifests differ");
        for (std::size_t i = 0; i < out.params.size(); ++i) {
            if (ckpts[c].params[i].first != out.params[i].first ||
                ckpts[c].params[i].second.shape != out.params[i].second.shape)
                throw DataError("average_checkpoints: parameter '" + out.params[i].first +
                                "' differs between checkpoints");
            for (std::size_t k = 0; k < out.params[i].second.data.size(); ++k)
                out.params[i].second.data[k] += ckpts[c].params[i].second.data[k];
        }
    }
    const float inv = 1.0f / static_cast<float>(ckpts.size());
    for (auto& [name, tensor] : out.params)
        for (float& v : tensor.data) v *= inv;
    return out;
}

}  // namespace natlab
