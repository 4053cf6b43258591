#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "pgar/errors.hpp"
#include "pgar/matrix.hpp"
#include "pgar/rng.hpp"

namespace pgar {

// Fully connected classifier: ReLU hidden layers, softmax output, mean
// cross-entropy loss. Dimensions chain input -> hidden... -> n_classes.
struct Mlp {
    std::vector<Matrix> weights;             // layer i: in_i x out_i
    std::vector<std::vector<double>> biases; // layer i: out_i

    std::size_t n_layers() const { return weights.size(); }
    std::size_t input_dim() const { return weights.front().rows; }
    std::size_t output_dim() const { return weights.back().cols; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights.size(); ++l)
            n += weights[l].data.size() + biases[l].size();
        return n;
    }

    bool finite() const {
        for (std::size_t l = 0; l < weights.size(); ++l)
            if (!all_finite(weights[l]) || !all_finite(biases[l])) return false;
        return true;
    }
};

// He-scaled normal init for ReLU stacks; biases start at zero.
inline Mlp make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                    std::size_t n_classes, Rng& rng) {
    if (input_dim < 1) throw DomainError("make_mlp: input_dim must be >= 1");
    if (n_classes < 2) throw DomainError("make_mlp: n_classes must be >= 2");
    std::vector<std::size_t> dims;
    dims.push_back(input_dim);
    for (const std::size_t h : hidden) {
        if (h < 1) throw DomainError("make_mlp: hidden layer width must be >= 1");
        dims.push_back(h);
    }
    dims.push_back(n_classes);

    Mlp model;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        Matrix w(dims[l], dims[l + 1]);
        const double std_dev = std::sqrt(2.0 / static_cast<double>(dims[l]));
        for (double& x : w.data) x = std_dev * rng.normal();
        model.weights.push_back(std::move(w));
        model.biases.emplace_back(dims[l + 1], 0.0);
    }
    return model;
}

// Activations cached by forward for the matching backward pass.
struct ForwardCache {
    std::vector<Matrix> layer_inputs; // input of each layer (post-activation of previous)
    Matrix logits;                    // batch x classes
    Matrix log_probs;                 // batch x classes (log-softmax, exact for the loss)
    Matrix probs;                     // batch x classes, rows sum to 1
};

inline ForwardCache forward(const Mlp& model, const Matrix& batch_inputs) {
    if (batch_inputs.cols != model.input_dim())
        throw DomainError("forward: input width does not match model");

    ForwardCache cache;
    Matrix a = batch_inputs;
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
        cache.layer_inputs.push_back(a);
        Matrix z = matmul(a, model.weights[l]);
        for (std::size_t i = 0; i < z.rows; ++i)
            for (std::size_t j = 0; j < z.cols; ++j) z(i, j) += model.biases[l][j];
        if (l + 1 < model.n_layers()) {
            for (double& x : z.data) x = x > 0.0 ? x : 0.0; // ReLU
            a = std::move(z);
        } else {
            cache.logits = std::move(z);
        }
    }

    // Numerically stable log-softmax / softmax.
    const Matrix& z = cache.logits;
    cache.log_probs = Matrix(z.rows, z.cols);
    cache.probs = Matrix(z.rows, z.cols);
    for (std::size_t i = 0; i < z.rows; ++i) {
        double zmax = z(i, 0);
        for (std::size_t j = 1; j < z.cols; ++j) zmax = std::max(zmax, z(i, j));
        double sum = 0.0;
        for (std::size_t j = 0; j < z.cols; ++j) sum += std::exp(z(i, j) - zmax);
        const double log_sum = std::log(sum);
        for (std::size_t j = 0; j < z.cols; ++j) {
            cache.log_probs(i, j) = z(i, j) - zmax - log_sum;
            cache.probs(i, j) = std::exp(cache.log_probs(i, j));
        }
    }
    return cache;
}

// Parameter-shaped gradient container.
struct Gradients {
    std::vector<Matrix> d_weights;
    std::vector<std::vector<double>> d_biases;

    bool finite() const {
        for (const auto& w : d_weights)
            if (!all_finite(w)) return false;
        for (const auto& b : d_biases)
            if (!all_finite(b)) return false;
        return true;
    }

    void scale(double s) {
        for (auto& w : d_weights)
            for (double& x : w.data) x *= s;
        for (auto& b : d_biases)
            for (double& x : b) x *= s;
    }

    double squared_norm() const {
        double s = 0.0;
        for (const auto& w : d_weights)
            for (const double x : w.data) s += x * x;
        for (const auto& b : d_biases)
            for (const double x : b) s += x * x;
        return s;
    }

    double norm() const { return std::sqrt(squared_norm()); }

    std::vector<double> flatten() const {
        std::vector<double> v;
        for (const auto& w : d_weights) v.insert(v.end(), w.data.begin(), w.data.end());
        for (const auto& b : d_biases) v.insert(v.end(), b.begin(), b.end());
        return v;
    }
};

inline std::vector<double> flatten_params(const Mlp& model) {
    std::vector<double> v;
    for (const auto& w : model.weights) v.insert(v.end(), w.data.begin(), w.data.end());
    for (const auto& b : model.biases) v.insert(v.end(), b.begin(), b.end());
    return v;
}

struct BackwardResult {
    double loss = 0.0;
    Gradients grads;
};

// Mean softmax cross-entropy and its exact gradients.
inline BackwardResult backward(const Mlp& model, const ForwardCache& cache,
                               std::span<const std::size_t> labels) {
    const std::size_t batch = cache.logits.rows;
    const std::size_t classes = cache.logits.cols;
    if (labels.size() != batch) throw DomainError("backward: label count != batch size");
    for (const std::size_t l : labels)
        if (l >= classes) throw DomainError("backward: label out of range");

    BackwardResult result;
    double loss = 0.0;
    Matrix d_logits(batch, classes);
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        loss -= cache.log_probs(i, labels[i]);
        for (std::size_t j = 0; j < classes; ++j) {
            const double onehot = (j == labels[i]) ? 1.0 : 0.0;
            d_logits(i, j) = (cache.probs(i, j) - onehot) * inv_batch;
        }
    }
    result.loss = loss * inv_batch;

    const std::size_t n_layers = model.n_layers();
    result.grads.d_weights.resize(n_layers);
    result.grads.d_biases.resize(n_layers);

    Matrix delta = std::move(d_logits);
    for (std::size_t l = n_layers; l-- > 0;) {
        const Matrix& layer_in = cache.layer_inputs[l];
        result.grads.d_weights[l] = matmul_at_b(layer_in, delta);
        auto& db = result.grads.d_biases[l];
        db.assign(delta.cols, 0.0);
        for (std::size_t i = 0; i < delta.rows; ++i)
            for (std::size_t j = 0; j < delta.cols; ++j) db[j] += delta(i, j);
        if (l > 0) {
            Matrix prev_delta = matmul_a_bt(delta, model.weights[l]);
            // ReLU mask: layer_inputs[l] is the post-activation output of layer l-1.
            for (std::size_t i = 0; i < prev_delta.rows; ++i)
                for (std::size_t j = 0; j < prev_delta.cols; ++j)
                    if (layer_in(i, j) <= 0.0) prev_delta(i, j) = 0.0;
            delta = std::move(prev_delta);
        }
    }
    return result;
}

} // namespace pgar
