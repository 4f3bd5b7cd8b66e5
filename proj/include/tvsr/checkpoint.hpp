#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tvsr/model.hpp"

namespace tvsr {

// Checkpoint container: a magic line, a single-line JSON manifest (format
// version, config document, tensor directory with blob offsets, optional
// extras), then one flat little-endian f32 blob holding every tensor.
inline constexpr const char* kCheckpointMagic = "TVSRCKPT1";
inline constexpr int kCheckpointVersion = 1;

struct NamedTensorData {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct CheckpointFile {
    nlohmann::ordered_json config;
    nlohmann::ordered_json extras;  // train state etc; empty object if unused
    std::vector<NamedTensorData> tensors;

    const NamedTensorData* find(const std::string& name) const {
        for (const auto& t : tensors)
            if (t.name == name) return &t;
        return nullptr;
    }
};

void write_checkpoint_file(const CheckpointFile& file, const std::string& path);
CheckpointFile read_checkpoint_file(const std::string& path);

nlohmann::ordered_json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::ordered_json& j);

// Model-level save/load. Extra tensors (optimizer state) ride along in the
// same container under their own names.
template <typename S>
void save_checkpoint(const ModelParamsT<S>& params, const std::string& path,
                     nlohmann::ordered_json extras = nlohmann::ordered_json::object(),
                     const std::vector<NamedTensorData>& extra_tensors = {}) {
    CheckpointFile file;
    file.config = config_to_json(params.config);
    file.extras = std::move(extras);
    for (const auto& [name, tensor] : params.store.items()) {
        NamedTensorData t;
        t.name = name;
        t.shape = tensor.shape();
        t.values.reserve(static_cast<std::size_t>(tensor.size()));
        for (S v : tensor.data()) t.values.push_back(static_cast<float>(v));
        file.tensors.push_back(std::move(t));
    }
    for (const auto& t : extra_tensors) file.tensors.push_back(t);
    write_checkpoint_file(file, path);
}

// Rebuilds the model from the embedded config and fills every parameter.
// Fails naming the first model tensor missing from the file.
template <typename S>
ModelParamsT<S> load_checkpoint(const CheckpointFile& file) {
    ModelConfig config = config_from_json(file.config);
    ModelParamsT<S> params = init_parameters<S>(config, 0);
    for (auto& [name, tensor] : params.store.items()) {
        const NamedTensorData* stored = file.find(name);
        if (stored == nullptr)
            throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
        if (stored->shape != tensor.shape())
            throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " + shape_str(stored->shape) +
                                     ", expected " + shape_str(tensor.shape()));
        auto dst = const_cast<TensorT<S>&>(tensor).mutable_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<S>(stored->values[i]);
    }
    return params;
}

template <typename S>
ModelParamsT<S> load_checkpoint(const std::string& path) {
    return load_checkpoint<S>(read_checkpoint_file(path));
}

}  // namespace tvsr
