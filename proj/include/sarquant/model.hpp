#pragma once

// Feed-forward sarcasm-level regressor: L sigmoid hidden layers of width H,
// inverted dropout after each hidden activation (train mode only), and a
// single sigmoid output unit trained with mean squared error and Adam.
// Gradients are computed by hand; everything is double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "features.hpp"
#include "hash.hpp"
#include "random.hpp"

namespace sarquant {

/// Dense row-major matrix, rows = fan-in, cols = fan-out.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }
    std::span<const double> row(std::size_t r) const noexcept { return {data.data() + r * cols, cols}; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct Dense {
    Matrix weights;
    std::vector<double> bias;

    friend bool operator==(const Dense&, const Dense&) = default;
};

struct RegressorParams {
    std::size_t input_dim = 0;
    std::size_t hidden_width = 0;
    std::size_t hidden_layers = 0;
    std::vector<Dense> layers;  // hidden_layers hidden layers, then the output layer

    std::size_t parameter_count() const noexcept {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.weights.data.size() + l.bias.size();
        return n;
    }

    /// Shapes consistent with (D, H, L) and every entry finite.
    void validate() const {
        if (layers.size() != hidden_layers + 1)
            throw DataError("expected " + std::to_string(hidden_layers + 1) + " layers, got " +
                            std::to_string(layers.size()));
        for (std::size_t l = 0; l < layers.size(); ++l) {
            const std::size_t fan_in = l == 0 ? input_dim : hidden_width;
            const std::size_t fan_out = l == hidden_layers ? 1 : hidden_width;
            const auto& layer = layers[l];
            if (layer.weights.rows != fan_in || layer.weights.cols != fan_out ||
                layer.weights.data.size() != fan_in * fan_out || layer.bias.size() != fan_out)
                throw DataError("layer " + std::to_string(l) + " has inconsistent shape");
            for (double w : layer.weights.data)
                if (!std::isfinite(w)) throw DataError("layer " + std::to_string(l) + " has a non-finite weight");
            for (double b : layer.bias)
                if (!std::isfinite(b)) throw DataError("layer " + std::to_string(l) + " has a non-finite bias");
        }
    }

    friend bool operator==(const RegressorParams&, const RegressorParams&) = default;
};

/// Same layout as RegressorParams; holds dLoss/dParam.
struct Gradients {
    std::vector<Dense> layers;
};

inline Gradients zeros_like(const RegressorParams& params) {
    Gradients g;
    g.layers.reserve(params.layers.size());
    for (const auto& l : params.layers)
        g.layers.push_back({Matrix(l.weights.rows, l.weights.cols), std::vector<double>(l.bias.size(), 0.0)});
    return g;
}

inline void set_zero(Gradients& g) noexcept {
    for (auto& l : g.layers) {
        std::fill(l.weights.data.begin(), l.weights.data.end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
}

struct TrainConfig {
    std::size_t batch_size = 8;
    std::size_t epochs = 10;
    double learning_rate = 1e-3;
    double dropout = 0.2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t hidden_width = 128;
    std::size_t hidden_layers = 2;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("Adam betas must be in [0, 1)");
        if (!(epsilon > 0.0)) throw ConfigError("Adam epsilon must be > 0");
        if (hidden_width < 1 || hidden_layers < 1) throw ConfigError("hidden width and depth must be >= 1");
    }
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamConfig from(const TrainConfig& c) noexcept {
        return {c.learning_rate, c.beta1, c.beta2, c.epsilon};
    }
};

struct AdamState {
    Gradients m;
    Gradients v;
    std::uint64_t t = 0;

    static AdamState for_params(const RegressorParams& p) { return {zeros_like(p), zeros_like(p), 0}; }
};

/// Per-layer values recorded by a train-mode forward pass.
struct ForwardCache {
    std::vector<std::vector<double>> inputs;          // input to layer l (post-dropout for l >= 1)
    std::vector<std::vector<double>> pre_activations; // z for every layer, output last
    std::vector<std::vector<double>> activations;     // sigmoid(z) of hidden layers, before dropout
    std::vector<std::vector<double>> masks;           // entries in {0, 1/(1-p)}
    double output = 0.0;
};

struct TrainForward {
    double output = 0.0;
    ForwardCache cache;
};

// -- primitives --------------------------------------------------------------

/// Logistic function; the x < 0 branch avoids overflow of exp(-x).
inline double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Glorot-uniform weights from a seeded generator, zero biases.
inline RegressorParams init_model(std::size_t input_dim, std::size_t hidden_width,
                                  std::size_t hidden_layers, std::uint64_t seed) {
    if (input_dim < 1 || hidden_width < 1 || hidden_layers < 1)
        throw ConfigError("model dimensions must be >= 1");
    RegressorParams p{input_dim, hidden_width, hidden_layers, {}};
    Rng rng(seed);
    for (std::size_t l = 0; l <= hidden_layers; ++l) {
        const std::size_t fan_in = l == 0 ? input_dim : hidden_width;
        const std::size_t fan_out = l == hidden_layers ? 1 : hidden_width;
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Dense layer{Matrix(fan_in, fan_out), std::vector<double>(fan_out, 0.0)};
        for (double& w : layer.weights.data) w = uniform(rng, -limit, limit);
        p.layers.push_back(std::move(layer));
    }
    return p;
}

namespace detail {

// z = x * W + b; zero inputs are skipped (hashed features are sparse).
inline void affine(std::span<const double> x, const Dense& layer, std::vector<double>& z) {
    z.assign(layer.bias.begin(), layer.bias.end());
    const std::size_t cols = layer.weights.cols;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* w = layer.weights.data.data() + i * cols;
        for (std::size_t j = 0; j < cols; ++j) z[j] += xi * w[j];
    }
}

inline void check_input(const RegressorParams& params, std::span<const double> x) {
    if (x.size() != params.input_dim)
        throw DataError("feature dimension " + std::to_string(x.size()) + " != model input dimension " +
                        std::to_string(params.input_dim));
}

}  // namespace detail

/// Inference-mode forward pass: no dropout, no cache.
inline double forward_infer(const RegressorParams& params, std::span<const double> x) {
    detail::check_input(params, x);
    std::vector<double> current(x.begin(), x.end());
    std::vector<double> z;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        detail::affine(current, params.layers[l], z);
        for (double& v : z) v = sigmoid(v);
        current.swap(z);
    }
    return current.front();
}

/// Train-mode forward pass. Hidden activations are multiplied by an
/// inverted-dropout mask; dropout == 0 draws nothing from `rng`.
inline TrainForward forward_train(const RegressorParams& params, std::span<const double> x,
                                  double dropout, Rng& rng) {
    detail::check_input(params, x);
    const std::size_t hidden = params.hidden_layers;
    const double keep = 1.0 - dropout;
    const double scale = 1.0 / keep;
    TrainForward out;
    auto& c = out.cache;
    c.inputs.reserve(hidden + 1);
    c.inputs.emplace_back(x.begin(), x.end());
    c.pre_activations.resize(hidden + 1);
    c.activations.resize(hidden);
    c.masks.resize(hidden);
    for (std::size_t l = 0; l < hidden; ++l) {
        auto& z = c.pre_activations[l];
        detail::affine(c.inputs[l], params.layers[l], z);
        auto& a = c.activations[l];
        a.resize(z.size());
        auto& mask = c.masks[l];
        mask.assign(z.size(), 1.0);
        std::vector<double> next(z.size());
        for (std::size_t j = 0; j < z.size(); ++j) {
            a[j] = sigmoid(z[j]);
            if (dropout > 0.0) mask[j] = uniform01(rng) < keep ? scale : 0.0;
            next[j] = a[j] * mask[j];
        }
        c.inputs.push_back(std::move(next));
    }
    auto& z_out = c.pre_activations[hidden];
    detail::affine(c.inputs[hidden], params.layers[hidden], z_out);
    c.output = sigmoid(z_out.front());
    out.output = c.output;
    return out;
}

/// (1/N) * sum (pred - target)^2.
inline double mse_loss(std::span<const double> preds, std::span<const double> targets) {
    if (preds.size() != targets.size())
        throw DataError("prediction/target length mismatch: " + std::to_string(preds.size()) + " vs " +
                        std::to_string(targets.size()));
    if (preds.empty()) throw DataError("mse of an empty sequence");
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double d = preds[i] - targets[i];
        sum += d * d;
    }
    return sum / static_cast<double>(preds.size());
}

/// Adds the gradient of scale * (output - target)^2 to `grads`. For a batch
/// mean, call once per example with scale = 1/N.
inline void backward_accumulate(const RegressorParams& params, const ForwardCache& cache, double target,
                                double scale, Gradients& grads) {
    const std::size_t hidden = params.hidden_layers;
    const double y = cache.output;
    std::vector<double> delta{2.0 * (y - target) * scale * y * (1.0 - y)};
    std::vector<double> upstream;
    for (std::size_t l = hidden + 1; l-- > 0;) {
        const auto& layer = params.layers[l];
        auto& g = grads.layers[l];
        const auto& input = cache.inputs[l];
        const std::size_t cols = layer.weights.cols;
        for (std::size_t j = 0; j < cols; ++j) g.bias[j] += delta[j];
        for (std::size_t i = 0; i < input.size(); ++i) {
            const double xi = input[i];
            if (xi == 0.0) continue;
            double* gw = g.weights.data.data() + i * cols;
            for (std::size_t j = 0; j < cols; ++j) gw[j] += xi * delta[j];
        }
        if (l == 0) break;
        // Gradient w.r.t. the (post-dropout) input of this layer.
        upstream.assign(input.size(), 0.0);
        for (std::size_t i = 0; i < input.size(); ++i) {
            const double* w = layer.weights.data.data() + i * cols;
            double s = 0.0;
            for (std::size_t j = 0; j < cols; ++j) s += w[j] * delta[j];
            upstream[i] = s;
        }
        const auto& a = cache.activations[l - 1];
        const auto& mask = cache.masks[l - 1];
        delta.resize(a.size());
        for (std::size_t j = 0; j < a.size(); ++j) delta[j] = upstream[j] * mask[j] * a[j] * (1.0 - a[j]);
    }
}

/// Gradient of (output - target)^2 for one cached example.
inline Gradients backward(const RegressorParams& params, const ForwardCache& cache, double target,
                          double scale = 1.0) {
    Gradients g = zeros_like(params);
    backward_accumulate(params, cache, target, scale, g);
    return g;
}

/// One Adam update of a single scalar; `t` is the already-incremented step.
inline void adam_update(double& theta, double& m, double& v, double g, std::uint64_t t,
                        const AdamConfig& cfg) noexcept {
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m / (1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
    const double v_hat = v / (1.0 - std::pow(cfg.beta2, static_cast<double>(t)));
    theta -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
}

inline void adam_step(AdamState& state, RegressorParams& params, const Gradients& grads,
                      const AdamConfig& cfg) {
    if (state.m.layers.size() != params.layers.size() || grads.layers.size() != params.layers.size())
        throw ConfigError("Adam state/gradient shapes do not match parameters");
    ++state.t;
    const std::uint64_t t = state.t;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    auto update = [&](std::vector<double>& theta, std::vector<double>& m, std::vector<double>& v,
                      const std::vector<double>& g) {
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            theta[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
        }
    };
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        update(params.layers[l].weights.data, state.m.layers[l].weights.data, state.v.layers[l].weights.data,
               grads.layers[l].weights.data);
        update(params.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias, grads.layers[l].bias);
    }
}

// -- training ----------------------------------------------------------------

struct Sample {
    FeatureVector features;
    double label = 0.0;
};

struct TrainResult {
    RegressorParams params;
    std::vector<double> loss_history;  // mean train-mode MSE per epoch
};

/// Trains on data[indices]. Each epoch reshuffles with a seeded Fisher-Yates,
/// runs mini-batches of config.batch_size (the last may be smaller), and takes
/// one Adam step per batch on the batch-mean MSE.
inline TrainResult train(std::span<const Sample> data, std::span<const std::size_t> indices,
                         const TrainConfig& config) {
    config.validate();
    if (indices.empty()) throw DataError("training set is empty");
    const std::size_t dim = data[indices.front()].features.size();
    for (auto i : indices)
        if (data[i].features.size() != dim)
            throw DataError("inconsistent feature dimension at example " + std::to_string(i));

    TrainResult result;
    result.params = init_model(dim, config.hidden_width, config.hidden_layers, derive_seed(config.seed, "init"));
    auto& params = result.params;
    Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
    Rng dropout_rng(derive_seed(config.seed, "dropout"));
    const AdamConfig adam = AdamConfig::from(config);
    AdamState state = AdamState::for_params(params);
    Gradients grads = zeros_like(params);
    std::vector<std::size_t> order(indices.begin(), indices.end());

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        fisher_yates(std::span<std::size_t>(order), shuffle_rng);
        double epoch_sq = 0.0;
        for (std::size_t start = 0, batch = 0; start < order.size(); start += config.batch_size, ++batch) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            const double scale = 1.0 / static_cast<double>(end - start);
            set_zero(grads);
            double batch_sq = 0.0;
            for (std::size_t k = start; k < end; ++k) {
                const Sample& s = data[order[k]];
                const auto fwd = forward_train(params, s.features.view(), config.dropout, dropout_rng);
                const double d = fwd.output - s.label;
                batch_sq += d * d;
                backward_accumulate(params, fwd.cache, s.label, scale, grads);
            }
            if (!std::isfinite(batch_sq))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                                    std::to_string(batch + 1));
            epoch_sq += batch_sq;
            adam_step(state, params, grads, adam);
        }
        result.loss_history.push_back(epoch_sq / static_cast<double>(order.size()));
    }
    return result;
}

inline TrainResult train(std::span<const Sample> data, const TrainConfig& config) {
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return train(data, all, config);
}

/// Sarcasm level estimate in (0, 1).
inline double predict(const RegressorParams& params, std::span<const double> x) {
    return forward_infer(params, x);
}

inline double predict(const RegressorParams& params, const FeatureVector& x) {
    return forward_infer(params, x.view());
}

// -- gradient check ----------------------------------------------------------

struct GradCheckResult {
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    std::size_t entries = 0;
};

/// Compares every analytic gradient entry of (output - y)^2 with the central
/// difference (L(theta+h) - L(theta-h)) / 2h, dropout disabled. Entries whose
/// absolute disagreement is <= 1e-8 count as exact.
inline GradCheckResult grad_check(const RegressorParams& params, std::span<const double> x, double y, double h) {
    if (!(h > 0.0) || !std::isfinite(h)) throw ConfigError("finite-difference step must be > 0");
    constexpr double kAbsoluteFloor = 1e-8;
    Rng unused(0);
    const auto fwd = forward_train(params, x, 0.0, unused);
    const Gradients analytic = backward(params, fwd.cache, y);

    RegressorParams probe = params;
    auto loss = [&] {
        const double d = forward_infer(probe, x) - y;
        return d * d;
    };
    GradCheckResult r;
    auto check = [&](std::vector<double>& theta, const std::vector<double>& g) {
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double saved = theta[i];
            theta[i] = saved + h;
            const double plus = loss();
            theta[i] = saved - h;
            const double minus = loss();
            theta[i] = saved;
            const double numeric = (plus - minus) / (2.0 * h);
            const double diff = std::abs(g[i] - numeric);
            r.max_absolute_error = std::max(r.max_absolute_error, diff);
            if (diff > kAbsoluteFloor)
                r.max_relative_error =
                    std::max(r.max_relative_error, diff / std::max(std::abs(g[i]), std::abs(numeric)));
            ++r.entries;
        }
    };
    for (std::size_t l = 0; l < probe.layers.size(); ++l) {
        check(probe.layers[l].weights.data, analytic.layers[l].weights.data);
        check(probe.layers[l].bias, analytic.layers[l].bias);
    }
    return r;
}

}  // namespace sarquant
