#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "loralab/config.hpp"
#include "loralab/io.hpp"
#include "loralab/model.hpp"

namespace loralab {

namespace ckpt_detail {

inline json matrix_to_json(const Matrix& m) {
    json rows = json::array();
    for (std::size_t i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Matrix matrix_from_json(const json& j, const std::string& where) {
    if (!j.is_array() || j.empty() || !j.front().is_array())
        throw io_error("checkpoint: " + where + " is not a nested array");
    const std::size_t rows = j.size();
    const std::size_t cols = j.front().size();
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        if (j[i].size() != cols) throw io_error("checkpoint: ragged matrix in " + where);
        for (std::size_t c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    }
    return m;
}

inline json vector_to_json(const Matrix& row) {
    json out = json::array();
    for (std::size_t j = 0; j < row.cols(); ++j) out.push_back(row(0, j));
    return out;
}

inline Matrix vector_from_json(const json& j, const std::string& where) {
    if (!j.is_array()) throw io_error("checkpoint: " + where + " is not an array");
    Matrix m(1, j.size());
    for (std::size_t i = 0; i < j.size(); ++i) m(0, i) = j[i].get<double>();
    return m;
}

}  // namespace ckpt_detail

inline json layer_to_json(const Layer& layer) {
    using ckpt_detail::matrix_to_json;
    using ckpt_detail::vector_to_json;
    if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
        return json{{"kind", "dense"},
                    {"n1", dense->weight.value.rows()},
                    {"n2", dense->weight.value.cols()},
                    {"W", matrix_to_json(dense->weight.value)},
                    {"trainable", dense->weight.trainable}};
    }
    if (const auto* bias = std::get_if<BiasLayer>(&layer)) {
        return json{{"kind", "bias"},
                    {"dim", bias->bias.value.cols()},
                    {"b", vector_to_json(bias->bias.value)},
                    {"trainable", bias->bias.trainable}};
    }
    if (std::get_if<ReluLayer>(&layer)) return json{{"kind", "relu"}};
    if (const auto* lora = std::get_if<LoraLayer>(&layer)) {
        return json{{"kind", "lora"},
                    {"n1", lora->out_dim()},
                    {"n2", lora->in_dim()},
                    {"r", lora->rank()},
                    {"scale", lora->scale},
                    {"W0", matrix_to_json(lora->base.value)},
                    {"A", matrix_to_json(lora->down.value)},
                    {"B", matrix_to_json(lora->up.value)}};
    }
    const auto& ada = std::get<AdaLoraLayer>(layer);
    return json{{"kind", "adalora"},
                {"n1", ada.out_dim()},
                {"n2", ada.in_dim()},
                {"r", ada.rank()},
                {"scale", ada.scale},
                {"W0", matrix_to_json(ada.base.value)},
                {"P", matrix_to_json(ada.left.value)},
                {"Lambda", vector_to_json(ada.singular.value)},
                {"Q", matrix_to_json(ada.right.value)}};
}

inline Layer layer_from_json(const json& j, std::size_t index) {
    using ckpt_detail::matrix_from_json;
    using ckpt_detail::vector_from_json;
    const std::string where = "layer " + std::to_string(index);
    const std::string kind = j.value("kind", "");
    auto check_dims = [&](const Matrix& m, std::size_t n1, std::size_t n2, const char* name) {
        if (m.rows() != n1 || m.cols() != n2)
            throw io_error("checkpoint: " + where + " (" + kind + "): " + name + " is " +
                           m.shape_str() + ", expected " + std::to_string(n1) + "x" +
                           std::to_string(n2));
    };
    if (kind == "dense") {
        Matrix w = matrix_from_json(j.at("W"), where + " W");
        check_dims(w, j.at("n1").get<std::size_t>(), j.at("n2").get<std::size_t>(), "W");
        return DenseLayer{{std::move(w), j.value("trainable", true)}};
    }
    if (kind == "bias") {
        Matrix b = vector_from_json(j.at("b"), where + " b");
        check_dims(b, 1, j.at("dim").get<std::size_t>(), "b");
        return BiasLayer{{std::move(b), j.value("trainable", true)}};
    }
    if (kind == "relu") return ReluLayer{};
    if (kind == "lora") {
        const auto n1 = j.at("n1").get<std::size_t>();
        const auto n2 = j.at("n2").get<std::size_t>();
        const auto r = j.at("r").get<std::size_t>();
        LoraLayer layer;
        layer.base = {matrix_from_json(j.at("W0"), where + " W0"), false};
        layer.down = {matrix_from_json(j.at("A"), where + " A"), true};
        layer.up = {matrix_from_json(j.at("B"), where + " B"), true};
        layer.scale = j.value("scale", 1.0);
        check_dims(layer.base.value, n1, n2, "W0");
        check_dims(layer.down.value, r, n2, "A");
        check_dims(layer.up.value, n1, r, "B");
        return layer;
    }
    if (kind == "adalora") {
        const auto n1 = j.at("n1").get<std::size_t>();
        const auto n2 = j.at("n2").get<std::size_t>();
        const auto r = j.at("r").get<std::size_t>();
        AdaLoraLayer layer;
        layer.base = {matrix_from_json(j.at("W0"), where + " W0"), false};
        layer.left = {matrix_from_json(j.at("P"), where + " P"), true};
        layer.singular = {vector_from_json(j.at("Lambda"), where + " Lambda"), true};
        layer.right = {matrix_from_json(j.at("Q"), where + " Q"), true};
        layer.scale = j.value("scale", 1.0);
        check_dims(layer.base.value, n1, n2, "W0");
        check_dims(layer.left.value, n1, r, "P");
        check_dims(layer.singular.value, 1, r, "Lambda");
        check_dims(layer.right.value, r, n2, "Q");
        return layer;
    }
    throw io_error("checkpoint: " + where + " has unknown kind '" + kind + "'");
}

struct Checkpoint {
    Model model;
    ModelSpec spec;
};

inline std::string dump_checkpoint(const Model& model, const ModelSpec& spec) {
    json j{{"format_version", 1}, {"spec", to_json(spec)}, {"layers", json::array()}};
    for (const Layer& layer : model.layers()) j["layers"].push_back(layer_to_json(layer));
    return j.dump(2) + "\n";
}

inline Checkpoint parse_checkpoint(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw io_error(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    try {
        if (j.value("format_version", 0) != 1)
            throw io_error("checkpoint: unsupported format_version");
        Checkpoint ckpt;
        ckpt.spec = model_spec_from_json(j.at("spec"));
        std::vector<Layer> layers;
        const json& arr = j.at("layers");
        for (std::size_t i = 0; i < arr.size(); ++i) layers.push_back(layer_from_json(arr[i], i));
        ckpt.model = Model::from_layers(std::move(layers), ckpt.spec.input_dim, ckpt.spec.classes);
        return ckpt;
    } catch (const json::exception& e) {
        throw io_error(std::string("malformed checkpoint: ") + e.what());
    }
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model,
                            const ModelSpec& spec) {
    write_text_file(path, dump_checkpoint(model, spec));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw config_error("checkpoint file not found: " + path.string());
    return parse_checkpoint(read_text_file(path));
}

}  // namespace loralab
