#pragma once

// JSON model document: dimensions, dropout, hidden activation, row-major
// weights per layer, biases, plus the feature and training configuration
// needed to featurize new text the same way.

#include <cstddef>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "error.hpp"
#include "features.hpp"
#include "model.hpp"

namespace sarquant {

inline constexpr int kModelFormatVersion = 1;

struct ModelFile {
    RegressorParams params;
    FeatureConfig features;
    TrainConfig train;
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"batch_size", c.batch_size}, {"epochs", c.epochs},   {"learning_rate", c.learning_rate},
            {"dropout", c.dropout},       {"beta1", c.beta1},     {"beta2", c.beta2},
            {"epsilon", c.epsilon},       {"hidden_width", c.hidden_width},
            {"hidden_layers", c.hidden_layers}, {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.epochs = j.at("epochs").get<std::size_t>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.dropout = j.at("dropout").get<double>();
    c.beta1 = j.at("beta1").get<double>();
    c.beta2 = j.at("beta2").get<double>();
    c.epsilon = j.at("epsilon").get<double>();
    c.hidden_width = j.at("hidden_width").get<std::size_t>();
    c.hidden_layers = j.at("hidden_layers").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

inline nlohmann::json to_json(const ModelFile& m) {
    const auto& p = m.params;
    nlohmann::json weights = nlohmann::json::array();
    nlohmann::json biases = nlohmann::json::array();
    for (const auto& layer : p.layers) {
        weights.push_back(layer.weights.data);
        biases.push_back(layer.bias);
    }
    return {{"format_version", kModelFormatVersion},
            {"D", p.input_dim},
            {"H", p.hidden_width},
            {"L", p.hidden_layers},
            {"p", m.train.dropout},
            {"hidden_activation", "sigmoid"},
            {"output_activation", "sigmoid"},
            {"weights", std::move(weights)},
            {"biases", std::move(biases)},
            {"features", to_json(m.features)},
            {"train_config", to_json(m.train)}};
}

inline ModelFile model_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format_version").get<int>() != kModelFormatVersion)
            throw DataError("unsupported model format_version " + j.at("format_version").dump());
        if (j.at("hidden_activation").get<std::string>() != "sigmoid")
            throw DataError("unsupported hidden activation " + j.at("hidden_activation").dump());
        ModelFile m;
        auto& p = m.params;
        p.input_dim = j.at("D").get<std::size_t>();
        p.hidden_width = j.at("H").get<std::size_t>();
        p.hidden_layers = j.at("L").get<std::size_t>();
        const auto& weights = j.at("weights");
        const auto& biases = j.at("biases");
        if (!weights.is_array() || !biases.is_array() || weights.size() != p.hidden_layers + 1 ||
            biases.size() != p.hidden_layers + 1)
            throw DataError("model must hold L+1 weight and bias arrays");
        for (std::size_t l = 0; l <= p.hidden_layers; ++l) {
            const std::size_t fan_in = l == 0 ? p.input_dim : p.hidden_width;
            const std::size_t fan_out = l == p.hidden_layers ? 1 : p.hidden_width;
            Dense layer{Matrix(fan_in, fan_out), biases[l].get<std::vector<double>>()};
            auto flat = weights[l].get<std::vector<double>>();
            if (flat.size() != fan_in * fan_out)
                throw DataError("layer " + std::to_string(l) + " has " + std::to_string(flat.size()) +
                                " weights, expected " + std::to_string(fan_in * fan_out));
            layer.weights.data = std::move(flat);
            p.layers.push_back(std::move(layer));
        }
        p.validate();
        m.features = feature_config_from_json(j.at("features"));
        m.train = train_config_from_json(j.at("train_config"));
        m.train.dropout = j.at("p").get<double>();
        if (m.features.dimension != p.input_dim)
            throw DataError("feature dimension does not match model input dimension");
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed model document: ") + e.what());
    } catch (const ConfigError& e) {
        throw DataError(std::string("malformed model document: ") + e.what());
    }
}

inline ModelFile load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError("model '" + path + "': " + e.what());
    }
    return model_from_json(j);
}

}  // namespace sarquant
