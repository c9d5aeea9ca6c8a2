#include "compcal/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "compcal/hash.hpp"

namespace compcal::model {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'C', 'C', 'A', 'L', 'C', 'K', 'V', '1'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
}

std::uint64_t get_u64(const unsigned char* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
    return v;
}

// Visits every parameter tensor in the canonical payload order.
void for_each_tensor(const LayeredClassifier& m,
                     const std::function<void(const double*, std::size_t)>& fn) {
    for (const EncoderBlock& b : m.blocks()) {
        fn(b.dense.weights.data(), b.dense.weights.size());
        fn(b.dense.bias.data(), b.dense.bias.size());
    }
    fn(m.head().weights.data(), m.head().weights.size());
    fn(m.head().bias.data(), m.head().bias.size());
    for (const Probe& p : m.probes()) {
        fn(p.head.weights.data(), p.head.weights.size());
        fn(p.head.bias.data(), p.head.bias.size());
    }
}

void for_each_tensor_mut(LayeredClassifier& m,
                         const std::function<void(double*, std::size_t)>& fn) {
    for (EncoderBlock& b : m.blocks()) {
        fn(b.dense.weights.data(), b.dense.weights.size());
        fn(b.dense.bias.data(), b.dense.bias.size());
    }
    fn(m.head().weights.data(), m.head().weights.size());
    fn(m.head().bias.data(), m.head().bias.size());
    for (Probe& p : m.probes()) {
        fn(p.head.weights.data(), p.head.weights.size());
        fn(p.head.bias.data(), p.head.bias.size());
    }
}

json arch_to_json(const ArchConfig& cfg) {
    return json{{"input_dim", cfg.input_dim},
                {"width", cfg.width},
                {"blocks", cfg.blocks},
                {"classes", cfg.classes},
                {"dropout_rate", cfg.dropout_rate},
                {"activation", net::to_string(cfg.activation)}};
}

ArchConfig arch_from_json(const json& j) {
    ArchConfig cfg;
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.width = j.at("width").get<std::size_t>();
    cfg.blocks = j.at("blocks").get<std::size_t>();
    cfg.classes = j.at("classes").get<std::size_t>();
    cfg.dropout_rate = j.at("dropout_rate").get<double>();
    cfg.activation = net::activation_from_string(j.at("activation").get<std::string>());
    return cfg;
}

}  // namespace

void save_checkpoint(const LayeredClassifier& m, const std::string& path,
                     const CheckpointExtra& extra) {
    std::string payload;
    std::size_t doubles = 0;
    for_each_tensor(m, [&](const double* data, std::size_t n) {
        doubles += n;
        for (std::size_t i = 0; i < n; ++i) put_u64(payload, std::bit_cast<std::uint64_t>(data[i]));
    });

    json header;
    header["arch"] = arch_to_json(m.config());
    json probes = json::array();
    for (const Probe& p : m.probes()) {
        probes.push_back({{"attach_after", p.attach_after},
                          {"trained", p.trained},
                          {"trainable", m.probe_trainable(p.attach_after)}});
    }
    header["probes"] = probes;
    json block_flags = json::array();
    for (std::size_t layer = 1; layer <= m.depth(); ++layer) block_flags.push_back(m.block_trainable(layer));
    header["freeze"] = {{"blocks", block_flags}, {"head", m.head_trainable()}};
    header["rng_states"] = extra.rng_states;
    header["config_hash"] = extra.config_hash;
    header["payload_doubles"] = doubles;
    header["payload_fnv1a64"] = hex64(fnv1a64(payload.data(), payload.size()));

    const std::string header_str = header.dump();
    std::string blob;
    blob.reserve(8 + 4 + 8 + header_str.size() + payload.size());
    blob.append(kMagic, sizeof kMagic);
    put_u32(blob, kFormatVersion);
    put_u64(blob, header_str.size());
    blob += header_str;
    blob += payload;

    const std::filesystem::path final_path(path);
    const std::filesystem::path tmp_path(path + ".tmp");
    {
        std::ofstream out(tmp_path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("save_checkpoint: cannot open " + tmp_path.string());
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        out.flush();
        if (!out) throw std::runtime_error("save_checkpoint: write failed for " + tmp_path.string());
    }
    std::filesystem::rename(tmp_path, final_path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* bytes = reinterpret_cast<const unsigned char*>(blob.data());

    if (blob.size() < 20 || std::memcmp(blob.data(), kMagic, sizeof kMagic) != 0) {
        throw std::runtime_error("load_checkpoint: " + path + " is not a checkpoint file");
    }
    const std::uint32_t version = get_u32(bytes + 8);
    if (version != kFormatVersion) {
        throw std::runtime_error("load_checkpoint: unsupported format version " + std::to_string(version));
    }
    const std::uint64_t header_len = get_u64(bytes + 12);
    if (blob.size() < 20 + header_len) {
        throw std::runtime_error("load_checkpoint: truncated header in " + path);
    }
    json header;
    try {
        header = json::parse(blob.substr(20, header_len));
    } catch (const json::exception& e) {
        throw std::runtime_error("load_checkpoint: malformed header in " + path + ": " + e.what());
    }

    const std::size_t doubles = header.at("payload_doubles").get<std::size_t>();
    const std::size_t payload_off = 20 + header_len;
    if (blob.size() != payload_off + doubles * 8) {
        throw std::runtime_error("load_checkpoint: truncated payload in " + path + " (expected " +
                                 std::to_string(doubles * 8) + " payload bytes, found " +
                                 std::to_string(blob.size() - payload_off) + ")");
    }
    const std::string expected_sum = header.at("payload_fnv1a64").get<std::string>();
    const std::string actual_sum = hex64(fnv1a64(blob.data() + payload_off, doubles * 8));
    if (expected_sum != actual_sum) {
        throw std::runtime_error("load_checkpoint: payload checksum mismatch in " + path);
    }

    LayeredClassifier model(arch_from_json(header.at("arch")));
    for (const json& pj : header.at("probes")) {
        Probe p;
        p.head = net::DenseLayer(model.config().width, model.config().classes);
        p.attach_after = pj.at("attach_after").get<std::size_t>();
        p.trained = pj.at("trained").get<bool>();
        model.attach_probe_copy(p);
        model.probe_at(p.attach_after).trained = p.trained;
        model.set_probe_trainable(p.attach_after, pj.at("trainable").get<bool>());
    }
    const json& freeze = header.at("freeze");
    const json& block_flags = freeze.at("blocks");
    if (block_flags.size() != model.depth()) {
        throw std::runtime_error("load_checkpoint: freeze mask length mismatch in " + path);
    }
    for (std::size_t layer = 1; layer <= model.depth(); ++layer) {
        model.set_block_trainable(layer, block_flags[layer - 1].get<bool>());
    }
    model.set_head_trainable(freeze.at("head").get<bool>());

    std::size_t expected_in_model = 0;
    for_each_tensor(model, [&](const double*, std::size_t n) { expected_in_model += n; });
    if (expected_in_model != doubles) {
        throw std::runtime_error("load_checkpoint: payload size does not match architecture in " + path);
    }

    const unsigned char* cursor = bytes + payload_off;
    for_each_tensor_mut(model, [&](double* data, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            data[i] = std::bit_cast<double>(get_u64(cursor));
            cursor += 8;
        }
    });

    CheckpointExtra extra;
    extra.rng_states = header.at("rng_states").get<std::map<std::string, std::string>>();
    extra.config_hash = header.at("config_hash").get<std::string>();
    return {std::move(model), std::move(extra)};
}

CheckpointExtra load_checkpoint_into(LayeredClassifier& m, const std::string& path) {
    LoadedCheckpoint loaded = load_checkpoint(path);
    if (!(loaded.model.config() == m.config())) {
        throw std::runtime_error("load_checkpoint_into: architecture mismatch between " + path +
                                 " and the target model");
    }
    if (loaded.model.probes().size() != m.probes().size()) {
        throw std::runtime_error("load_checkpoint_into: probe layout mismatch for " + path);
    }
    for (std::size_t i = 0; i < m.probes().size(); ++i) {
        if (loaded.model.probes()[i].attach_after != m.probes()[i].attach_after) {
            throw std::runtime_error("load_checkpoint_into: probe layout mismatch for " + path);
        }
    }
    m = std::move(loaded.model);
    return std::move(loaded.extra);
}

}  // namespace compcal::model
