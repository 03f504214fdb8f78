#include "prefrank/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "prefrank/errors.hpp"

namespace prefrank {

namespace {

constexpr char kMagic[8] = {'P', 'R', 'C', 'K', 'P', 'T', '0', '1'};
constexpr int kVersion = 1;

void put_u64_le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

uint64_t get_u64_le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
        v |= static_cast<uint64_t>(p[i]) << (8 * i);
    }
    return v;
}

}  // namespace

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return {
        {"vocab_size", cfg.vocab_size},
        {"embed_dim", cfg.embed_dim},
        {"num_layers", cfg.num_layers},
        {"num_heads", cfg.num_heads},
        {"max_seq_len", cfg.max_seq_len},
        {"adapter_rank", cfg.adapter_rank},
        {"adapter_targets", cfg.adapter_targets.to_string()},
        {"train_base_with_adapters", cfg.train_base_with_adapters},
    };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    try {
        cfg.vocab_size = j.at("vocab_size").get<int>();
        cfg.embed_dim = j.at("embed_dim").get<int>();
        cfg.num_layers = j.at("num_layers").get<int>();
        cfg.num_heads = j.at("num_heads").get<int>();
        cfg.max_seq_len = j.at("max_seq_len").get<int>();
        cfg.adapter_rank = j.at("adapter_rank").get<int>();
        cfg.adapter_targets = AdapterTargets::parse(j.at("adapter_targets").get<std::string>());
        cfg.train_base_with_adapters = j.at("train_base_with_adapters").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed model config in checkpoint header: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

void save_checkpoint(const std::string& path, const Model& model,
                     const CheckpointMeta& meta) {
    nlohmann::json manifest = nlohmann::json::array();
    for (const TensorSpec& spec : model.tensors()) {
        manifest.push_back({{"name", spec.name},
                            {"shape", spec.shape},
                            {"offset", spec.offset},
                            {"size", spec.size},
                            {"trainable", spec.trainable}});
    }
    const nlohmann::json header = {
        {"version", kVersion},
        {"config", model_config_to_json(model.config())},
        {"seed", meta.seed},
        {"step", meta.step},
        {"stage", meta.stage},
        {"tensors", manifest},
    };
    const std::string header_bytes = header.dump();

    std::string out;
    out.reserve(16 + header_bytes.size() + 8 * model.param_count());
    out.append(kMagic, sizeof(kMagic));
    put_u64_le(out, header_bytes.size());
    out.append(header_bytes);
    for (const double x : model.data()) {
        put_u64_le(out, std::bit_cast<uint64_t>(x));
    }

    // Write to a sibling temp file and rename so readers never see a
    // half-written checkpoint.
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open checkpoint file for writing: " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("short write to checkpoint file: " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        throw IoError("cannot move checkpoint into place: " + path);
    }
}

Model load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint file: " + path);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(raw.data());

    if (raw.size() < 16 || std::memcmp(raw.data(), kMagic, sizeof(kMagic)) != 0) {
        throw IoError("not a checkpoint file (bad magic): " + path);
    }
    const uint64_t header_len = get_u64_le(p + 8);
    if (raw.size() < 16 + header_len) {
        throw IoError("truncated checkpoint header: " + path);
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(raw.substr(16, header_len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("unparseable checkpoint header: ") + e.what());
    }
    if (!header.contains("version") || header["version"].get<int>() != kVersion) {
        throw IoError("unsupported checkpoint version in " + path);
    }
    const ModelConfig cfg = model_config_from_json(header.at("config"));

    const size_t blob_off = 16 + header_len;
    const size_t blob_bytes = raw.size() - blob_off;
    if (blob_bytes % 8 != 0) {
        throw IoError("checkpoint parameter blob is not a whole number of doubles: " + path);
    }
    std::vector<double> blob(blob_bytes / 8);
    for (size_t i = 0; i < blob.size(); ++i) {
        blob[i] = std::bit_cast<double>(get_u64_le(p + blob_off + 8 * i));
    }
    Model model = Model::restore(cfg, std::move(blob));

    // The manifest must agree with the layout implied by the config, else
    // the blob would be silently misinterpreted.
    try {
        const nlohmann::json& manifest = header.at("tensors");
        if (manifest.size() != model.tensors().size()) {
            throw IoError("checkpoint manifest length mismatch in " + path);
        }
        for (size_t i = 0; i < manifest.size(); ++i) {
            const TensorSpec& spec = model.tensors()[i];
            if (manifest[i].at("name").get<std::string>() != spec.name ||
                manifest[i].at("offset").get<size_t>() != spec.offset ||
                manifest[i].at("size").get<size_t>() != spec.size) {
                throw IoError("checkpoint manifest disagrees with config layout at tensor '" +
                              spec.name + "' in " + path);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed tensor manifest in checkpoint: ") + e.what());
    }

    if (meta != nullptr) {
        try {
            meta->seed = header.at("seed").get<uint64_t>();
            meta->step = header.at("step").get<int64_t>();
            meta->stage = header.at("stage").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("malformed checkpoint metadata: ") + e.what());
        }
    }
    return model;
}

}  // namespace prefrank
