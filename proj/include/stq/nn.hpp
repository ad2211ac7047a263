#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace stq {

enum class Activation { Identity, Relu, Sigmoid, Tanh };

inline std::string activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Relu: return "relu";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Tanh: return "tanh";
    }
    throw std::logic_error("unknown activation");
}

inline Activation activation_from_name(const std::string& s) {
    if (s == "identity") return Activation::Identity;
    if (s == "relu") return Activation::Relu;
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "tanh") return Activation::Tanh;
    throw std::invalid_argument("unknown activation tag: " + s);
}

inline Eigen::MatrixXd apply_activation(Activation a, const Eigen::MatrixXd& z) {
    switch (a) {
        case Activation::Identity: return z;
        case Activation::Relu: return z.cwiseMax(0.0);
        case Activation::Sigmoid: return ((-z.array()).exp() + 1.0).inverse().matrix();
        case Activation::Tanh: return z.array().tanh().matrix();
    }
    throw std::logic_error("unknown activation");
}

// Derivative w.r.t. the preactivation, expressed via z and the activation value.
inline Eigen::MatrixXd activation_grad(Activation a, const Eigen::MatrixXd& z,
                                       const Eigen::MatrixXd& value) {
    switch (a) {
        case Activation::Identity: return Eigen::MatrixXd::Ones(z.rows(), z.cols());
        case Activation::Relu:
            return (z.array() > 0.0).cast<double>().matrix();
        case Activation::Sigmoid:
            return (value.array() * (1.0 - value.array())).matrix();
        case Activation::Tanh: return (1.0 - value.array().square()).matrix();
    }
    throw std::logic_error("unknown activation");
}

struct DenseLayer {
    Eigen::MatrixXd W;  // M_l x M_{l-1}
    Eigen::VectorXd b;  // M_l
    Activation act = Activation::Relu;
};

struct DenseNet {
    std::vector<DenseLayer> layers;

    Eigen::Index input_dim() const { return layers.front().W.cols(); }
    Eigen::Index output_dim() const { return layers.back().W.rows(); }

    void check_chain() const {
        for (std::size_t l = 1; l < layers.size(); ++l)
            if (layers[l].W.cols() != layers[l - 1].W.rows())
                throw std::invalid_argument("layer " + std::to_string(l) +
                                            " input dim does not match previous output dim");
    }
};

// Per-layer activations kept for the backward pass. Columns are samples.
struct ForwardCache {
    std::vector<Eigen::MatrixXd> inputs;   // a_{l-1} for each layer
    std::vector<Eigen::MatrixXd> preacts;  // z_l
    std::vector<Eigen::MatrixXd> values;   // a_l = act(z_l)
    Eigen::MatrixXd output;
};

inline ForwardCache forward(const DenseNet& net, const Eigen::MatrixXd& x) {
    if (x.rows() != net.input_dim())
        throw std::invalid_argument("forward: input dim " + std::to_string(x.rows()) +
                                    " != network input dim " + std::to_string(net.input_dim()));
    ForwardCache cache;
    Eigen::MatrixXd a = x;
    for (const auto& layer : net.layers) {
        cache.inputs.push_back(a);
        Eigen::MatrixXd z = (layer.W * a).colwise() + layer.b;
        cache.preacts.push_back(z);
        a = apply_activation(layer.act, z);
        cache.values.push_back(a);
    }
    cache.output = a;
    return cache;
}

struct Gradients {
    std::vector<Eigen::MatrixXd> dW;
    std::vector<Eigen::VectorXd> db;
};

// Reverse-mode pass. `output_grad` is dL/d(output), same shape as the cached
// output (already scaled by any 1/batch factor the loss uses).
inline Gradients backward(const DenseNet& net, const ForwardCache& cache,
                          const Eigen::MatrixXd& output_grad) {
    const std::size_t L = net.layers.size();
    if (cache.inputs.size() != L)
        throw std::invalid_argument("backward: cache does not match network depth");
    if (output_grad.rows() != cache.output.rows() || output_grad.cols() != cache.output.cols())
        throw std::invalid_argument("backward: output gradient shape mismatch");

    Gradients g;
    g.dW.resize(L);
    g.db.resize(L);
    Eigen::MatrixXd delta = output_grad;
    for (std::size_t li = L; li-- > 0;) {
        const auto& layer = net.layers[li];
        delta = delta.cwiseProduct(activation_grad(layer.act, cache.preacts[li], cache.values[li]));
        g.dW[li] = delta * cache.inputs[li].transpose();
        g.db[li] = delta.rowwise().sum();
        if (li > 0) delta = layer.W.transpose() * delta;
    }
    return g;
}

struct TrainConfig {
    double learning_rate = 1e-3;
    int batch_size = 32;
    int epochs = 200;
    double l1 = 0.0;
    double l2 = 0.0;
    std::set<int> l1l2_layers;  // layer indices the penalty applies to
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;
    int patience = 20;
    double momentum = 0.0;  // classical momentum on the minibatch gradient

    void validate() const {
        if (learning_rate <= 0.0) throw std::invalid_argument("learning_rate must be positive");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
        if (epochs < 1) throw std::invalid_argument("epochs must be positive");
        if (l1 < 0.0 || l2 < 0.0) throw std::invalid_argument("penalties must be nonnegative");
        if (momentum < 0.0 || momentum >= 1.0)
            throw std::invalid_argument("momentum must be in [0,1)");
    }
};

// W <- W - lr * (grad + 2*l2*W + l1*sign(W)) on penalized layers, plain SGD
// elsewhere. Biases are never penalized.
inline void sgd_step(DenseNet& net, const Gradients& g, const TrainConfig& cfg) {
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& layer = net.layers[l];
        if (cfg.l1l2_layers.count(static_cast<int>(l)) && (cfg.l1 > 0.0 || cfg.l2 > 0.0)) {
            Eigen::MatrixXd penalty = 2.0 * cfg.l2 * layer.W +
                                      cfg.l1 * layer.W.array().sign().matrix();
            layer.W -= cfg.learning_rate * (g.dW[l] + penalty);
        } else {
            layer.W -= cfg.learning_rate * g.dW[l];
        }
        layer.b -= cfg.learning_rate * g.db[l];
    }
}

// He-style init: N(0, 2/fan_in) entries, deterministic per seed.
inline Eigen::MatrixXd init_weights(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(cols)));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
    return m;
}

// Hidden layers ReLU, final layer identity. Layer l gets a seed derived from
// the run seed so nets of different depth stay reproducible.
inline DenseNet make_dense_net(Eigen::Index input_dim, const std::vector<int>& layer_sizes,
                               std::uint64_t seed) {
    if (layer_sizes.empty()) throw std::invalid_argument("make_dense_net: no layers");
    DenseNet net;
    Eigen::Index in = input_dim;
    for (std::size_t l = 0; l < layer_sizes.size(); ++l) {
        DenseLayer layer;
        layer.W = init_weights(layer_sizes[l], in, seed * 1000003ULL + l);
        layer.b = Eigen::VectorXd::Zero(layer_sizes[l]);
        layer.act = (l + 1 == layer_sizes.size()) ? Activation::Identity : Activation::Relu;
        net.layers.push_back(std::move(layer));
        in = layer_sizes[l];
    }
    net.check_chain();
    return net;
}

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
    const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    return m;
}

// Versioned checkpoint with explicit shapes and activation tags.
inline nlohmann::json net_to_json(const DenseNet& net) {
    nlohmann::json j;
    j["format_version"] = 1;
    j["layers"] = nlohmann::json::array();
    for (const auto& layer : net.layers) {
        nlohmann::json lj;
        lj["rows"] = layer.W.rows();
        lj["cols"] = layer.W.cols();
        lj["activation"] = activation_name(layer.act);
        lj["W"] = matrix_to_json(layer.W);
        lj["b"] = matrix_to_json(layer.b);
        j["layers"].push_back(std::move(lj));
    }
    return j;
}

inline DenseNet net_from_json(const nlohmann::json& j) {
    if (j.at("format_version").get<int>() != 1)
        throw std::runtime_error("unsupported checkpoint format version");
    DenseNet net;
    for (const auto& lj : j.at("layers")) {
        DenseLayer layer;
        layer.W = matrix_from_json(lj.at("W"));
        layer.b = matrix_from_json(lj.at("b")).col(0);
        layer.act = activation_from_name(lj.at("activation").get<std::string>());
        if (layer.W.rows() != lj.at("rows").get<Eigen::Index>() ||
            layer.W.cols() != lj.at("cols").get<Eigen::Index>())
            throw std::runtime_error("checkpoint shape header disagrees with payload");
        net.layers.push_back(std::move(layer));
    }
    net.check_chain();
    return net;
}

}  // namespace stq
