#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mate/errors.hpp"
#include "mate/matrix.hpp"
#include "mate/rng.hpp"

namespace mate {

struct dense_layer {
    matrix weight;            // out_dim x in_dim
    std::vector<double> bias; // out_dim

    bool operator==(const dense_layer& other) const = default;
};

/// Shared feature encoder plus one linear classifier head per camera.
/// The encoder applies rectified-linear units between layers and leaves
/// the final layer linear; heads are bias-free logit matrices of shape
/// N_p x feature_dim.
struct model_params {
    std::vector<dense_layer> encoder;
    std::vector<matrix> heads; // head for camera p at index p-1

    bool operator==(const model_params& other) const = default;

    int input_dim() const { return encoder.empty() ? 0 : encoder.front().weight.cols; }
    int feature_dim() const { return encoder.empty() ? 0 : encoder.back().weight.rows; }
    int camera_count() const { return static_cast<int>(heads.size()); }

    int head_classes(int camera) const {
        if (camera < 1 || camera > camera_count())
            throw numeric_error("invalid camera index " + std::to_string(camera));
        return heads[static_cast<std::size_t>(camera - 1)].rows;
    }
};

/// Shape-congruent with the parameters it updates.
struct gradients {
    std::vector<dense_layer> encoder;
    std::vector<matrix> heads;
};

inline gradients zeros_like(const model_params& params) {
    gradients g;
    g.encoder.reserve(params.encoder.size());
    for (const auto& layer : params.encoder) {
        dense_layer zl;
        zl.weight = matrix(layer.weight.rows, layer.weight.cols);
        zl.bias.assign(layer.bias.size(), 0.0);
        g.encoder.push_back(std::move(zl));
    }
    g.heads.reserve(params.heads.size());
    for (const auto& h : params.heads) g.heads.emplace_back(h.rows, h.cols);
    return g;
}

struct net_config {
    int input_dim = 16;
    std::vector<int> hidden_dims = {64};
    int feature_dim = 32;
};

/// Glorot-style uniform initialization in +-sqrt(6/(fan_in+fan_out)),
/// zero biases. Draw order: encoder layers first (weights row-major,
/// then bias), then heads in camera order.
inline model_params init_params(const net_config& cfg, const std::vector<int>& head_sizes, std::uint64_t seed) {
    if (cfg.input_dim < 1 || cfg.feature_dim < 1) throw config_error("net: dimensions must be >= 1");
    for (int h : cfg.hidden_dims)
        if (h < 1) throw config_error("net: hidden width must be >= 1");
    rng stream = rng(seed).substream(stream::init);
    auto init_matrix = [&](int rows, int cols) {
        matrix m(rows, cols);
        double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) m(r, c) = stream.uniform(-bound, bound);
        return m;
    };
    model_params params;
    std::vector<int> dims;
    dims.push_back(cfg.input_dim);
    for (int h : cfg.hidden_dims) dims.push_back(h);
    dims.push_back(cfg.feature_dim);
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        dense_layer layer;
        layer.weight = init_matrix(dims[i + 1], dims[i]);
        layer.bias.assign(static_cast<std::size_t>(dims[i + 1]), 0.0);
        params.encoder.push_back(std::move(layer));
    }
    for (int n : head_sizes) {
        if (n < 2) throw config_error("net: every head needs at least 2 classes");
        params.heads.push_back(init_matrix(n, cfg.feature_dim));
    }
    return params;
}

/// Per-layer activations captured by the forward pass for backprop.
/// act[0] is the input; act[i] for i >= 1 is layer i's output after the
/// rectifier (the final layer stays linear, so act.back() == pre.back()).
struct forward_cache {
    std::vector<std::vector<double>> pre;
    std::vector<std::vector<double>> act;
};

inline std::vector<double> encode_cached(const model_params& params, const std::vector<double>& x,
                                         forward_cache* cache) {
    if (params.encoder.empty()) throw numeric_error("encode: model has no encoder layers");
    if (static_cast<int>(x.size()) != params.input_dim())
        throw numeric_error("encode: input dimension " + std::to_string(x.size()) + " does not match model input " +
                            std::to_string(params.input_dim()));
    std::vector<double> a = x;
    if (cache) {
        cache->pre.clear();
        cache->act.clear();
        cache->act.push_back(a);
    }
    const std::size_t layers = params.encoder.size();
    for (std::size_t i = 0; i < layers; ++i) {
        const auto& layer = params.encoder[i];
        std::vector<double> z = matvec(layer.weight, a);
        for (std::size_t j = 0; j < z.size(); ++j) z[j] += layer.bias[j];
        if (!all_finite(z))
            throw numeric_error("encoder layer " + std::to_string(i + 1) + " produced a non-finite value");
        if (cache) cache->pre.push_back(z);
        if (i + 1 < layers)
            for (double& v : z) v = v > 0.0 ? v : 0.0; // rectifier between layers only
        a = std::move(z);
        if (cache) cache->act.push_back(a);
    }
    return a;
}

/// Camera-shared feature vector f(x).
inline std::vector<double> encode(const model_params& params, const std::vector<double>& x) {
    return encode_cached(params, x, nullptr);
}

/// Numerically stable softmax (max subtraction).
inline std::vector<double> softmax(const std::vector<double>& logits) {
    double m = logits.front();
    for (double z : logits) m = std::max(m, z);
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

/// Identity class distribution predicted by camera p's head for feature f.
inline std::vector<double> head_probs(const model_params& params, int camera, const std::vector<double>& f) {
    if (camera < 1 || camera > params.camera_count())
        throw numeric_error("head_probs: invalid camera index " + std::to_string(camera));
    const matrix& head = params.heads[static_cast<std::size_t>(camera - 1)];
    return softmax(matvec(head, f));
}

/// Floor applied inside every -log(probability) so an underflowed class
/// probability yields a large finite loss instead of inf. The same
/// constant is the implicit cut-off in the gradient path: the analytic
/// softmax-minus-onehot gradient never evaluates a log, so forward and
/// backward stay consistent wherever the floor is inactive.
inline constexpr double log_prob_floor = 1e-30;

inline double safe_neg_log(double p) { return -std::log(p > log_prob_floor ? p : log_prob_floor); }

/// Backpropagates a feature-space gradient through the encoder, adding
/// the per-layer contributions into grads.
inline void encoder_backward(const model_params& params, const forward_cache& cache,
                             const std::vector<double>& dfeature, gradients& grads) {
    std::vector<double> delta = dfeature; // gradient w.r.t. layer pre-activation
    for (std::size_t i = params.encoder.size(); i-- > 0;) {
        const auto& layer = params.encoder[i];
        auto& glayer = grads.encoder[i];
        const auto& input = cache.act[i];
        add_outer(glayer.weight, delta, input);
        for (std::size_t j = 0; j < delta.size(); ++j) glayer.bias[j] += delta[j];
        if (i == 0) break;
        std::vector<double> prev = matvec_transposed(layer.weight, delta);
        const auto& pre_prev = cache.pre[i - 1];
        for (std::size_t j = 0; j < prev.size(); ++j)
            if (pre_prev[j] <= 0.0) prev[j] = 0.0; // rectifier gate
        delta = std::move(prev);
    }
}

/// Learning rates and optional classical momentum (v = mu*v + g,
/// param -= lr*v). Momentum is off by default so updates stay a pure
/// function of (params, grads, learning rates).
struct optim_state {
    double lr_encoder = 0.005;
    double lr_heads = 0.05;
    double momentum = 0.0;
    std::optional<gradients> velocity;

    void validate() const {
        if (lr_encoder <= 0.0 || lr_heads <= 0.0) throw config_error("optimizer: learning rates must be > 0");
        if (momentum < 0.0 || momentum >= 1.0) throw config_error("optimizer: momentum must be in [0, 1)");
    }
};

inline void sgd_step(model_params& params, const gradients& grads, optim_state& opt) {
    opt.validate();
    auto apply = [](std::vector<double>& values, const std::vector<double>& g, double lr) {
        for (std::size_t i = 0; i < values.size(); ++i) values[i] -= lr * g[i];
    };
    if (opt.momentum == 0.0) {
        for (std::size_t i = 0; i < params.encoder.size(); ++i) {
            apply(params.encoder[i].weight.data, grads.encoder[i].weight.data, opt.lr_encoder);
            apply(params.encoder[i].bias, grads.encoder[i].bias, opt.lr_encoder);
        }
        for (std::size_t i = 0; i < params.heads.size(); ++i)
            apply(params.heads[i].data, grads.heads[i].data, opt.lr_heads);
        return;
    }
    if (!opt.velocity) opt.velocity = zeros_like(params);
    auto& vel = *opt.velocity;
    auto momentum_apply = [&](std::vector<double>& values, std::vector<double>& v, const std::vector<double>& g,
                              double lr) {
        for (std::size_t i = 0; i < values.size(); ++i) {
            v[i] = opt.momentum * v[i] + g[i];
            values[i] -= lr * v[i];
        }
    };
    for (std::size_t i = 0; i < params.encoder.size(); ++i) {
        momentum_apply(params.encoder[i].weight.data, vel.encoder[i].weight.data, grads.encoder[i].weight.data,
                       opt.lr_encoder);
        momentum_apply(params.encoder[i].bias, vel.encoder[i].bias, grads.encoder[i].bias, opt.lr_encoder);
    }
    for (std::size_t i = 0; i < params.heads.size(); ++i)
        momentum_apply(params.heads[i].data, vel.heads[i].data, grads.heads[i].data, opt.lr_heads);
}

// ---------------------------------------------------------------------------
// Checkpoints: a versioned JSON blob of shapes and row-major weights.
// A checkpoint holds one model, or several for per-camera ensembles.
// ---------------------------------------------------------------------------

struct checkpoint {
    std::vector<model_params> models;

    bool is_ensemble() const { return models.size() > 1; }
    const model_params& single() const {
        if (models.size() != 1) throw data_error("checkpoint: expected a single model");
        return models.front();
    }
};

namespace detail {

inline nlohmann::json matrix_to_json(const matrix& m) {
    return nlohmann::json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

inline matrix matrix_from_json(const nlohmann::json& j) {
    matrix m(j.at("rows").get<int>(), j.at("cols").get<int>());
    m.data = j.at("data").get<std::vector<double>>();
    if (m.data.size() != static_cast<std::size_t>(m.rows) * static_cast<std::size_t>(m.cols))
        throw data_error("checkpoint: matrix payload does not match its shape");
    return m;
}

inline nlohmann::json params_to_json(const model_params& params) {
    nlohmann::json j;
    j["encoder"] = nlohmann::json::array();
    for (const auto& layer : params.encoder)
        j["encoder"].push_back({{"weight", matrix_to_json(layer.weight)}, {"bias", layer.bias}});
    j["heads"] = nlohmann::json::array();
    for (const auto& h : params.heads) j["heads"].push_back(matrix_to_json(h));
    return j;
}

inline model_params params_from_json(const nlohmann::json& j) {
    model_params params;
    for (const auto& lj : j.at("encoder")) {
        dense_layer layer;
        layer.weight = matrix_from_json(lj.at("weight"));
        layer.bias = lj.at("bias").get<std::vector<double>>();
        if (static_cast<int>(layer.bias.size()) != layer.weight.rows)
            throw data_error("checkpoint: bias length does not match layer rows");
        params.encoder.push_back(std::move(layer));
    }
    for (const auto& hj : j.at("heads")) params.heads.push_back(matrix_from_json(hj));
    return params;
}

} // namespace detail

inline void save_checkpoint(const checkpoint& ckpt, const std::string& path) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = ckpt.is_ensemble() ? "ensemble" : "single";
    j["models"] = nlohmann::json::array();
    for (const auto& m : ckpt.models) j["models"].push_back(detail::params_to_json(m));
    std::ofstream os(path);
    if (!os) throw data_error("cannot open for writing: " + path);
    os << j.dump(2) << '\n';
    if (!os) throw data_error("write failure: " + path);
}

inline checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("checkpoint " + path + ": malformed JSON (" + std::string(e.what()) + ")");
    }
    if (j.at("schema_version").get<int>() != 1)
        throw data_error("checkpoint " + path + ": unsupported schema_version");
    checkpoint ckpt;
    for (const auto& mj : j.at("models")) ckpt.models.push_back(detail::params_from_json(mj));
    if (ckpt.models.empty()) throw data_error("checkpoint " + path + ": contains no models");
    return ckpt;
}

} // namespace mate
