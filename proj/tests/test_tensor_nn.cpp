#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fsgan/tensor_nn.hpp"
#include "oracles.hpp"

using namespace fsgan;

namespace {

DenseNet scalar_net(double w, double b, Activation out) {
    DenseNet net = make_zero_net({1, 1}, Activation::identity, out);
    net.params.weights[0](0, 0) = w;
    net.params.biases[0][0] = b;
    return net;
}

Batch random_batch(Rng& rng, int rows, int cols) {
    std::normal_distribution<double> n(0.0, 1.0);
    Batch x(rows, cols);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
    return x;
}

}  // namespace

TEST(Forward, ZeroNetworkGivesZeros) {
    const DenseNet net = make_zero_net({4, 7, 3}, Activation::leaky_relu, Activation::identity);
    Rng rng(1);
    const Matrix y = mlp_predict(net, random_batch(rng, 5, 4));
    EXPECT_TRUE(y.isZero(0.0));
}

TEST(Forward, ZeroLogisticLayerGivesOneHalf) {
    const DenseNet net = make_zero_net({3, 2}, Activation::leaky_relu, Activation::logistic);
    Rng rng(2);
    const Matrix y = mlp_predict(net, random_batch(rng, 6, 3));
    EXPECT_TRUE((y.array() == 0.5).all());
}

TEST(Forward, HandComputedAffine) {
    const DenseNet net = scalar_net(2.0, 1.0, Activation::identity);
    Batch x(1, 1);
    x << 3.0;
    EXPECT_DOUBLE_EQ(mlp_predict(net, x)(0, 0), 7.0);
}

TEST(Forward, LeakySlopeOnNegativeInputs) {
    DenseNet net = scalar_net(1.0, 0.0, Activation::leaky_relu);
    Batch x(2, 1);
    x << -5.0, 5.0;
    const Matrix y = mlp_predict(net, x);
    EXPECT_DOUBLE_EQ(y(0, 0), -1.0);
    EXPECT_DOUBLE_EQ(y(1, 0), 5.0);
}

TEST(Forward, ShapeMismatchRejected) {
    const DenseNet net = make_zero_net({3, 2}, Activation::leaky_relu, Activation::identity);
    EXPECT_THROW(mlp_forward(net, Batch::Zero(2, 4)), ShapeError);
}

TEST(Forward, SoftmaxRowsSumToOneAndLogisticStrictlyInside) {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const DenseNet sm = make_dense_net({5, 8, 4}, Activation::leaky_relu, Activation::softmax, rng);
        const DenseNet lg = make_dense_net({5, 8, 1}, Activation::leaky_relu, Activation::logistic, rng);
        const Batch x = random_batch(rng, 16, 5);
        const Matrix p = mlp_predict(sm, x * 20.0);
        for (Eigen::Index r = 0; r < p.rows(); ++r) EXPECT_NEAR(p.row(r).sum(), 1.0, 1e-12);
        const Matrix q = mlp_predict(lg, x);
        EXPECT_TRUE((q.array() > 0.0).all() && (q.array() < 1.0).all());
        const Matrix saturated = mlp_predict(lg, x * 1e6);
        EXPECT_TRUE((saturated.array() >= 0.0).all() && (saturated.array() <= 1.0).all());
    }
}

TEST(Forward, Deterministic) {
    Rng rng(4);
    const DenseNet net = make_dense_net({6, 9, 9, 2}, Activation::leaky_relu, Activation::softmax, rng);
    const Batch x = random_batch(rng, 10, 6);
    EXPECT_TRUE(identical(mlp_predict(net, x), mlp_predict(net, x)));
}

TEST(Init, GlorotBoundsAndZeroBiases) {
    Rng rng(5);
    const DenseNet net = make_dense_net({30, 20, 10}, Activation::leaky_relu, Activation::identity, rng);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const auto& w = net.params.weights[l];
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        EXPECT_LE(w.cwiseAbs().maxCoeff(), limit);
        EXPECT_TRUE(net.params.biases[l].isZero(0.0));
    }
    Rng again(5);
    EXPECT_EQ(net, make_dense_net({30, 20, 10}, Activation::leaky_relu, Activation::identity, again));
}

TEST(Init, GeometricWidths) {
    EXPECT_EQ(geometric_widths(100, 1, 2, 1), (std::vector<int>{100, 10, 1}));
    EXPECT_EQ(geometric_widths(100, 2500, 8, 32).size(), 9u);
    const auto floored = geometric_widths(1, 1, 4, 32);
    EXPECT_EQ(floored, (std::vector<int>{1, 32, 32, 32, 1}));
}

TEST(Backward, ZeroSeedGivesZeroGradients) {
    Rng rng(6);
    const DenseNet net = make_dense_net({4, 6, 3}, Activation::leaky_relu, Activation::logistic, rng);
    const auto acts = mlp_forward(net, random_batch(rng, 5, 4));
    const auto r = mlp_backward(net, acts, Matrix::Zero(5, 3));
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        EXPECT_TRUE(r.grads.weights[l].isZero(0.0));
        EXPECT_TRUE(r.grads.biases[l].isZero(0.0));
    }
    EXPECT_TRUE(r.input_grad.isZero(0.0));
}

TEST(Backward, SquaredOutputAnalytic) {
    // loss = y^2 with y = w x, w = 1, x = 3: dL/dw = 2 y x = 18.
    const DenseNet net = scalar_net(1.0, 0.0, Activation::identity);
    Batch x(1, 1);
    x << 3.0;
    const auto acts = mlp_forward(net, x);
    const auto r = mlp_backward(net, acts, 2.0 * acts.output());
    EXPECT_DOUBLE_EQ(r.grads.weights[0](0, 0), 18.0);
    EXPECT_DOUBLE_EQ(r.grads.biases[0][0], 6.0);
}

TEST(Backward, NonFiniteGradientReportsLayer) {
    Rng rng(7);
    DenseNet net = make_dense_net({2, 3, 1}, Activation::leaky_relu, Activation::identity, rng);
    const auto acts = mlp_forward(net, random_batch(rng, 2, 2));
    Matrix seed = Matrix::Ones(2, 1);
    seed(0, 0) = std::numeric_limits<double>::infinity();
    try {
        mlp_backward(net, acts, seed);
        FAIL() << "expected a divergence error";
    } catch (const DivergenceError& e) {
        EXPECT_EQ(e.layer(), 1);
    }
}

TEST(Backward, MatchesFiniteDifferencesOnRandomNets) {
    Rng rng(8);
    std::uniform_int_distribution<int> depth(1, 4), width(1, 32);
    const Activation outputs[] = {Activation::identity, Activation::logistic, Activation::softmax, Activation::leaky_relu};
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<int> dims{width(rng)};
        const int layers = depth(rng);
        for (int l = 0; l < layers; ++l) dims.push_back(width(rng));
        const Activation out = outputs[trial % 4];
        if (out == Activation::softmax && dims.back() < 2) dims.back() = 2;
        const DenseNet net = make_dense_net(dims, Activation::leaky_relu, out, rng);
        const Batch x = random_batch(rng, 4, dims.front());
        const auto acts = mlp_forward(net, x);
        if (oracle::kink_distance(acts, out == Activation::leaky_relu) < 1e-2) continue;
        // loss = sum(y .* c) for a fixed random c
        const Matrix c = random_batch(rng, 4, dims.back());
        const auto analytic = mlp_backward(net, acts, c).grads;
        const auto numeric = finite_diff_grad(net, [&](const Matrix& y) { return (y.array() * c.array()).sum(); }, x, 1e-5);
        EXPECT_LE(oracle::max_relative_error(analytic, numeric), 1e-6) << "trial " << trial;
    }
}

TEST(Backward, PreactivationSeedEqualsChainedSoftmaxCrossEntropy) {
    Rng rng(9);
    const DenseNet net = make_dense_net({3, 5, 4}, Activation::leaky_relu, Activation::softmax, rng);
    const Batch x = random_batch(rng, 6, 3);
    const auto acts = mlp_forward(net, x);
    Matrix onehot = Matrix::Zero(6, 4);
    for (int r = 0; r < 6; ++r) onehot(r, r % 4) = 1.0;
    const Matrix p = acts.output();
    const Matrix dlogp = -(onehot.array() / p.array()).matrix();
    const auto chained = mlp_backward(net, acts, dlogp, SeedKind::output).grads;
    const auto direct = mlp_backward(net, acts, p - onehot, SeedKind::preactivation).grads;
    EXPECT_LE(oracle::max_relative_error(chained, direct), 1e-12);
}

TEST(Adam, ZeroGradientIsIdentity) {
    Rng rng(10);
    DenseNet net = make_dense_net({3, 4, 2}, Activation::leaky_relu, Activation::identity, rng);
    const DenseNet before = net;
    auto state = AdamState::for_params(net.params);
    adam_step(net, ParamTensors::zeros_like(net.params), state);
    EXPECT_EQ(net, before);
    EXPECT_EQ(state.step_count, 1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    DenseNet net = scalar_net(1.0, 0.0, Activation::identity);
    auto state = AdamState::for_params(net.params, {.learning_rate = 0.001});
    Gradients g = ParamTensors::zeros_like(net.params);
    g.weights[0](0, 0) = 3.7;
    adam_step(net, g, state);
    EXPECT_NEAR(net.params.weights[0](0, 0), 1.0 - 0.001, 1e-9);
}

TEST(Adam, ZeroLearningRateIsIdentity) {
    Rng rng(11);
    DenseNet net = make_dense_net({3, 4, 2}, Activation::leaky_relu, Activation::identity, rng);
    const DenseNet before = net;
    auto state = AdamState::for_params(net.params, {.learning_rate = 0.0});
    Gradients g = ParamTensors::zeros_like(net.params);
    g.for_each_array([&](double* d, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) d[i] = 1.0 + static_cast<double>(i);
    });
    for (int k = 0; k < 3; ++k) adam_step(net, g, state);
    EXPECT_EQ(net, before);
}

TEST(Adam, ShapeMismatchRejected) {
    DenseNet net = scalar_net(1.0, 0.0, Activation::identity);
    auto state = AdamState::for_params(net.params);
    const DenseNet other = make_zero_net({2, 1}, Activation::identity, Activation::identity);
    EXPECT_THROW(adam_step(net, other.params, state), ShapeError);
}

TEST(FiniteDiff, QuadraticInWeight) {
    DenseNet net = scalar_net(3.0, 0.0, Activation::identity);
    const auto g = finite_diff_grad(
        net, [](const DenseNet& n) { return n.params.weights[0](0, 0) * n.params.weights[0](0, 0); }, 1e-5);
    EXPECT_NEAR(g.weights[0](0, 0), 6.0, 1e-6);
    EXPECT_NEAR(g.biases[0][0], 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(net.params.weights[0](0, 0), 3.0);
}

TEST(FiniteDiff, ConstantLossGivesZero) {
    Rng rng(12);
    DenseNet net = make_dense_net({3, 4, 2}, Activation::leaky_relu, Activation::identity, rng);
    const auto g = finite_diff_grad(net, [](const DenseNet&) { return 42.0; }, 1e-5);
    g.for_each_array([](const double* d, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(d[i], 0.0);
    });
}
