#pragma once

// Fully connected networks with hand-derived backpropagation, Adam, and a
// central-difference gradient oracle. Matrices are batch-major: one sample
// per row.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fsgan/error.hpp"

namespace fsgan {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
/// B x feature_dim mini-batch, one record per row.
using Batch = Matrix;
using Rng = std::mt19937_64;

/// Bit-exact equality including shape.
template <class A, class B>
bool identical(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

enum class Activation : std::uint8_t { identity = 0, leaky_relu = 1, logistic = 2, softmax = 3 };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::logistic: return "logistic";
        case Activation::softmax: return "softmax";
    }
    return "?";
}

inline constexpr double kDefaultLeakySlope = 0.2;

/// Per-layer weight/bias tensors. Used for network parameters, gradients and
/// optimizer moments alike.
struct ParamTensors {
    std::vector<Matrix> weights;  // weights[l] is out x in
    std::vector<Vector> biases;

    static ParamTensors zeros_like(const ParamTensors& other) {
        ParamTensors p;
        for (const auto& w : other.weights) p.weights.push_back(Matrix::Zero(w.rows(), w.cols()));
        for (const auto& b : other.biases) p.biases.push_back(Vector::Zero(b.size()));
        return p;
    }

    std::size_t size() const {
        std::size_t n = 0;
        for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
        for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
        return n;
    }

    bool all_finite() const {
        for (const auto& w : weights)
            if (!w.allFinite()) return false;
        for (const auto& b : biases)
            if (!b.allFinite()) return false;
        return true;
    }

    bool same_shape(const ParamTensors& o) const {
        if (weights.size() != o.weights.size() || biases.size() != o.biases.size()) return false;
        for (std::size_t l = 0; l < weights.size(); ++l)
            if (weights[l].rows() != o.weights[l].rows() || weights[l].cols() != o.weights[l].cols()) return false;
        for (std::size_t l = 0; l < biases.size(); ++l)
            if (biases[l].size() != o.biases[l].size()) return false;
        return true;
    }

    /// Visit every scalar slot as a contiguous array: f(double* data, size).
    template <class F>
    void for_each_array(F&& f) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            f(weights[l].data(), static_cast<std::size_t>(weights[l].size()));
            f(biases[l].data(), static_cast<std::size_t>(biases[l].size()));
        }
    }
    template <class F>
    void for_each_array(F&& f) const {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            f(weights[l].data(), static_cast<std::size_t>(weights[l].size()));
            f(biases[l].data(), static_cast<std::size_t>(biases[l].size()));
        }
    }

    bool operator==(const ParamTensors& o) const {
        if (!same_shape(o)) return false;
        for (std::size_t l = 0; l < weights.size(); ++l)
            if (!identical(weights[l], o.weights[l]) || !identical(biases[l], o.biases[l])) return false;
        return true;
    }
};

using Gradients = ParamTensors;

/// Multi-layer perceptron. Hidden layers share one activation; the last layer
/// has its own.
struct DenseNet {
    std::vector<int> layer_dims;  // input -> output, length = layers + 1
    ParamTensors params;
    Activation hidden_activation = Activation::leaky_relu;
    Activation output_activation = Activation::identity;
    double leaky_slope = kDefaultLeakySlope;

    std::size_t layer_count() const { return params.weights.size(); }
    int input_dim() const { return layer_dims.front(); }
    int output_dim() const { return layer_dims.back(); }
    std::size_t parameter_count() const { return params.size(); }
    Activation activation_of(std::size_t layer) const {
        return layer + 1 == layer_count() ? output_activation : hidden_activation;
    }

    bool operator==(const DenseNet&) const = default;
};

inline void validate_dims(const std::vector<int>& dims) {
    if (dims.size() < 2) throw ShapeError("network needs at least one layer");
    for (int d : dims)
        if (d <= 0) throw ShapeError("layer widths must be positive");
}

/// All-zero network of the given shape.
inline DenseNet make_zero_net(std::vector<int> dims, Activation hidden, Activation output,
                              double slope = kDefaultLeakySlope) {
    validate_dims(dims);
    DenseNet net;
    net.layer_dims = std::move(dims);
    net.hidden_activation = hidden;
    net.output_activation = output;
    net.leaky_slope = slope;
    for (std::size_t l = 0; l + 1 < net.layer_dims.size(); ++l) {
        net.params.weights.push_back(Matrix::Zero(net.layer_dims[l + 1], net.layer_dims[l]));
        net.params.biases.push_back(Vector::Zero(net.layer_dims[l + 1]));
    }
    return net;
}

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
inline DenseNet make_dense_net(std::vector<int> dims, Activation hidden, Activation output, Rng& rng,
                               double slope = kDefaultLeakySlope) {
    DenseNet net = make_zero_net(std::move(dims), hidden, output, slope);
    for (auto& w : net.params.weights) {
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        std::uniform_real_distribution<double> u(-limit, limit);
        // Column-major fill order is part of the determinism contract.
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
    }
    return net;
}

/// Layer widths interpolated geometrically between `in` and `out`, with hidden
/// widths floored at `min_hidden`.
inline std::vector<int> geometric_widths(int in, int out, int layers, int min_hidden) {
    if (in <= 0 || out <= 0 || layers <= 0) throw ShapeError("geometric_widths: non-positive argument");
    std::vector<int> dims{in};
    for (int k = 1; k < layers; ++k) {
        const double t = static_cast<double>(k) / layers;
        const double w = static_cast<double>(in) * std::pow(static_cast<double>(out) / in, t);
        dims.push_back(std::max(min_hidden, static_cast<int>(std::lround(w))));
    }
    dims.push_back(out);
    return dims;
}

namespace detail {

inline void apply_activation(Matrix& z, Activation a, double slope) {
    switch (a) {
        case Activation::identity: break;
        case Activation::leaky_relu: z = z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; }); break;
        case Activation::logistic:
            z = z.unaryExpr([](double v) {
                // Split on sign so exp never overflows.
                if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
                const double e = std::exp(v);
                return e / (1.0 + e);
            });
            break;
        case Activation::softmax:
            for (Eigen::Index r = 0; r < z.rows(); ++r) {
                const double mx = z.row(r).maxCoeff();
                z.row(r) = (z.row(r).array() - mx).exp();
                z.row(r) /= z.row(r).sum();
            }
            break;
    }
}

// Gradient w.r.t. pre-activation given gradient w.r.t. activation output `a`.
inline Matrix activation_backward(const Matrix& a, const Matrix& grad, Activation act, double slope) {
    switch (act) {
        case Activation::identity: return grad;
        case Activation::leaky_relu:
            // sign(a) == sign(z) for slope > 0
            return grad.cwiseProduct(a.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; }));
        case Activation::logistic: return grad.cwiseProduct(a.cwiseProduct((1.0 - a.array()).matrix()));
        case Activation::softmax: {
            Matrix dz(a.rows(), a.cols());
            for (Eigen::Index r = 0; r < a.rows(); ++r) {
                const double dot = a.row(r).dot(grad.row(r));
                dz.row(r) = a.row(r).cwiseProduct((grad.row(r).array() - dot).matrix());
            }
            return dz;
        }
    }
    return grad;
}

}  // namespace detail

/// Activations of every layer; `layers[0]` is the input batch and
/// `layers.back()` the network output.
struct Activations {
    std::vector<Matrix> layers;
    const Matrix& output() const { return layers.back(); }
    const Matrix& input() const { return layers.front(); }
};

inline Activations mlp_forward(const DenseNet& net, const Batch& batch) {
    if (batch.cols() != net.input_dim())
        throw ShapeError("mlp_forward: batch has " + std::to_string(batch.cols()) + " columns, net expects " +
                         std::to_string(net.input_dim()));
    Activations acts;
    acts.layers.reserve(net.layer_count() + 1);
    acts.layers.push_back(batch);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        Matrix z = acts.layers.back() * net.params.weights[l].transpose();
        z.rowwise() += net.params.biases[l].transpose();
        detail::apply_activation(z, net.activation_of(l), net.leaky_slope);
        acts.layers.push_back(std::move(z));
    }
    return acts;
}

/// Forward pass keeping only the output.
inline Matrix mlp_predict(const DenseNet& net, const Batch& batch) {
    return std::move(mlp_forward(net, batch).layers.back());
}

/// Which quantity the backward seed is a gradient of.
enum class SeedKind {
    output,         // dL/d(network output)
    preactivation,  // dL/d(last layer's pre-activation), e.g. softmax-minus-onehot
};

struct BackwardResult {
    Gradients grads;
    Matrix input_grad;
};

inline BackwardResult mlp_backward(const DenseNet& net, const Activations& acts, const Matrix& seed,
                                   SeedKind kind = SeedKind::output) {
    const std::size_t L = net.layer_count();
    if (acts.layers.size() != L + 1) throw ShapeError("mlp_backward: activations do not belong to this net");
    if (seed.rows() != acts.output().rows() || seed.cols() != acts.output().cols())
        throw ShapeError("mlp_backward: output gradient shape mismatch");

    BackwardResult out;
    out.grads.weights.resize(L);
    out.grads.biases.resize(L);

    Matrix delta = kind == SeedKind::preactivation
                       ? seed
                       : detail::activation_backward(acts.layers[L], seed, net.output_activation, net.leaky_slope);
    for (std::size_t l = L; l-- > 0;) {
        out.grads.weights[l].noalias() = delta.transpose() * acts.layers[l];
        out.grads.biases[l] = delta.colwise().sum().transpose();
        if (!out.grads.weights[l].allFinite() || !out.grads.biases[l].allFinite())
            throw DivergenceError("non-finite gradient in layer " + std::to_string(l), static_cast<int>(l));
        Matrix upstream = delta * net.params.weights[l];
        if (l > 0)
            delta = detail::activation_backward(acts.layers[l], upstream, net.hidden_activation, net.leaky_slope);
        else
            out.input_grad = std::move(upstream);
    }
    return out;
}

struct AdamConfig {
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double epsilon = 1e-8;
};

struct AdamState {
    ParamTensors first_moment;
    ParamTensors second_moment;
    std::int64_t step_count = 0;
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double epsilon = 1e-8;

    static AdamState for_params(const ParamTensors& p, const AdamConfig& cfg = {}) {
        AdamState s;
        s.first_moment = ParamTensors::zeros_like(p);
        s.second_moment = ParamTensors::zeros_like(p);
        s.learning_rate = cfg.learning_rate;
        s.beta1 = cfg.beta1;
        s.beta2 = cfg.beta2;
        s.epsilon = cfg.epsilon;
        return s;
    }

    void reset() {
        first_moment = ParamTensors::zeros_like(first_moment);
        second_moment = ParamTensors::zeros_like(second_moment);
        step_count = 0;
    }

    bool operator==(const AdamState&) const = default;
};

/// One bias-corrected Adam update, in place.
inline void adam_step(ParamTensors& params, const Gradients& grads, AdamState& state) {
    if (!params.same_shape(grads) || !params.same_shape(state.first_moment))
        throw ShapeError("adam_step: parameter/gradient/state shapes differ");
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    const double lr = state.learning_rate, b1 = state.beta1, b2 = state.beta2, eps = state.epsilon;

    auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
        update(params.weights[l], grads.weights[l], state.first_moment.weights[l], state.second_moment.weights[l]);
        update(params.biases[l], grads.biases[l], state.first_moment.biases[l], state.second_moment.biases[l]);
    }
}

inline void adam_step(DenseNet& net, const Gradients& grads, AdamState& state) { adam_step(net.params, grads, state); }

/// Central-difference gradient of `loss(net)` with respect to every parameter
/// of `net`. The net is perturbed in place and restored.
template <class Loss>
Gradients finite_diff_grad(DenseNet& net, Loss&& loss, double h) {
    Gradients g = ParamTensors::zeros_like(net.params);
    auto perturb = [&](double* data, double* out, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
            const double saved = data[i];
            data[i] = saved + h;
            const double up = loss(static_cast<const DenseNet&>(net));
            data[i] = saved - h;
            const double down = loss(static_cast<const DenseNet&>(net));
            data[i] = saved;
            out[i] = (up - down) / (2.0 * h);
        }
    };
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        perturb(net.params.weights[l].data(), g.weights[l].data(), static_cast<std::size_t>(g.weights[l].size()));
        perturb(net.params.biases[l].data(), g.biases[l].data(), static_cast<std::size_t>(g.biases[l].size()));
    }
    return g;
}

/// Convenience form: `loss_of_output(mlp_predict(net, batch))`.
template <class Loss>
Gradients finite_diff_grad(const DenseNet& net, Loss&& loss_of_output, const Batch& batch, double h) {
    DenseNet scratch = net;
    return finite_diff_grad(
        scratch, [&](const DenseNet& n) { return loss_of_output(mlp_predict(n, batch)); }, h);
}

}  // namespace fsgan
