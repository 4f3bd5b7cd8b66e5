#include "tvsr/checkpoint.hpp"

#include <bit>
#include <filesystem>
#include <fstream>

namespace tvsr {

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian only");

nlohmann::ordered_json config_to_json(const ModelConfig& config) {
    nlohmann::ordered_json j;
    j["embed_dim"] = config.embed_dim;
    j["heads"] = config.heads;
    j["encoder_depth"] = config.encoder_depth;
    j["n_fim"] = config.n_fim;
    j["stl_per_tab"] = config.stl_per_tab;
    j["window"] = config.window;
    j["r"] = config.r;
    j["variant"] = variant_name(config.variant);
    j["tau_min"] = config.tau_min;
    j["mlp_ratio"] = config.mlp_ratio;
    j["bias_hidden"] = config.bias_hidden;
    return j;
}

ModelConfig config_from_json(const nlohmann::ordered_json& j) {
    ModelConfig c;
    for (const auto& [key, _] : j.items()) {
        if (key != "embed_dim" && key != "heads" && key != "encoder_depth" && key != "n_fim" &&
            key != "stl_per_tab" && key != "window" && key != "r" && key != "variant" && key != "tau_min" &&
            key != "mlp_ratio" && key != "bias_hidden")
            throw std::runtime_error("config: unknown key '" + key + "'");
    }
    c.embed_dim = j.at("embed_dim").get<std::int64_t>();
    c.heads = j.at("heads").get<std::int64_t>();
    c.encoder_depth = j.at("encoder_depth").get<std::int64_t>();
    c.n_fim = j.at("n_fim").get<std::int64_t>();
    c.stl_per_tab = j.at("stl_per_tab").get<std::int64_t>();
    c.window = j.at("window").get<std::int64_t>();
    c.r = j.at("r").get<std::int64_t>();
    c.variant = variant_from_name(j.at("variant").get<std::string>());
    c.tau_min = j.at("tau_min").get<double>();
    c.mlp_ratio = j.at("mlp_ratio").get<std::int64_t>();
    c.bias_hidden = j.at("bias_hidden").get<std::int64_t>();
    c.validate();
    return c;
}

void write_checkpoint_file(const CheckpointFile& file, const std::string& path) {
    nlohmann::ordered_json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["config"] = file.config;
    manifest["extras"] = file.extras;
    nlohmann::ordered_json tensor_list = nlohmann::ordered_json::array();
    std::int64_t offset = 0;  // in bytes from blob start
    for (const auto& t : file.tensors) {
        if (numel(t.shape) != static_cast<std::int64_t>(t.values.size()))
            throw std::invalid_argument("checkpoint: tensor '" + t.name + "' data does not match its shape");
        nlohmann::ordered_json entry;
        entry["name"] = t.name;
        entry["shape"] = t.shape;
        entry["offset"] = offset;
        tensor_list.push_back(std::move(entry));
        offset += static_cast<std::int64_t>(t.values.size() * sizeof(float));
    }
    manifest["tensors"] = std::move(tensor_list);

    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("checkpoint: cannot open '" + tmp + "'");
        out << kCheckpointMagic << "\n" << manifest.dump() << "\n";
        for (const auto& t : file.tensors)
            out.write(reinterpret_cast<const char*>(t.values.data()),
                      static_cast<std::streamsize>(t.values.size() * sizeof(float)));
        if (!out) throw std::runtime_error("checkpoint: write failed for '" + tmp + "'");
    }
    std::filesystem::rename(tmp, path);
}

CheckpointFile read_checkpoint_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::string magic;
    if (!std::getline(in, magic) || magic != kCheckpointMagic)
        throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
    std::string manifest_line;
    if (!std::getline(in, manifest_line)) throw std::runtime_error("checkpoint: missing manifest");
    nlohmann::ordered_json manifest;
    try {
        manifest = nlohmann::ordered_json::parse(manifest_line);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint: malformed manifest: ") + e.what());
    }
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: format version " + std::to_string(version) + " not supported");

    CheckpointFile file;
    file.config = manifest.at("config");
    file.extras = manifest.contains("extras") ? manifest.at("extras") : nlohmann::ordered_json::object();

    std::vector<char> blob(std::istreambuf_iterator<char>(in), {});
    const std::int64_t blob_floats = static_cast<std::int64_t>(blob.size() / sizeof(float));
    if (blob.size() % sizeof(float) != 0) throw std::runtime_error("checkpoint: blob size not float-aligned");

    std::int64_t expected_bytes = 0;
    for (const auto& entry : manifest.at("tensors")) {
        NamedTensorData t;
        t.name = entry.at("name").get<std::string>();
        t.shape = entry.at("shape").get<Shape>();
        const std::int64_t offset = entry.at("offset").get<std::int64_t>();  // bytes
        const std::int64_t count = numel(t.shape);
        if (offset % static_cast<std::int64_t>(sizeof(float)) != 0)
            throw std::runtime_error("checkpoint: tensor '" + t.name + "' offset not float-aligned");
        if (offset != expected_bytes)
            throw std::runtime_error("checkpoint: tensor '" + t.name + "' offset out of order");
        if (offset / static_cast<std::int64_t>(sizeof(float)) + count > blob_floats)
            throw std::runtime_error("checkpoint: blob too short for tensor '" + t.name + "'");
        t.values.resize(static_cast<std::size_t>(count));
        std::memcpy(t.values.data(), blob.data() + offset, static_cast<std::size_t>(count) * sizeof(float));
        expected_bytes += count * static_cast<std::int64_t>(sizeof(float));
        file.tensors.push_back(std::move(t));
    }
    if (expected_bytes != static_cast<std::int64_t>(blob.size()))
        throw std::runtime_error("checkpoint: blob longer than manifest promises");
    return file;
}

}  // namespace tvsr
