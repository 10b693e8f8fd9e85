#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fsgan/metrics.hpp"
#include "oracles.hpp"

using namespace fsgan;

namespace {

std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, int k) {
    std::uniform_int_distribution<int> d(0, k - 1);
    std::vector<int> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

std::vector<int> permuted(const std::vector<int>& v, const std::vector<int>& sigma) {
    std::vector<int> out;
    for (int x : v) out.push_back(sigma[static_cast<std::size_t>(x)]);
    return out;
}

DiscreteDist random_dist(std::mt19937_64& rng, std::size_t k) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(k);
    for (auto& x : v) x = u(rng);
    return histogram(v, k, 0.0, 1.0);
}

}  // namespace

TEST(RandIndex, Examples) {
    const std::vector<int> t{0, 0, 1, 1};
    EXPECT_EQ(rand_index(t, std::vector<int>{5, 5, 2, 2}), 1.0);
    EXPECT_DOUBLE_EQ(rand_index(t, std::vector<int>{0, 1, 0, 1}), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(rand_index(t, std::vector<int>{7, 7, 7, 7}), 1.0 / 3.0);
    EXPECT_THROW(rand_index(std::vector<int>{0}, std::vector<int>{0}), ConfigError);
}

TEST(Nmi, Examples) {
    EXPECT_DOUBLE_EQ(nmi(std::vector<int>{0, 0, 1, 1}, std::vector<int>{1, 1, 0, 0}), 1.0);
    EXPECT_EQ(nmi(std::vector<int>{0, 1}, std::vector<int>{0, 0}), 0.0);
    EXPECT_EQ(nmi(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 1, 0, 1}), 0.0);
    EXPECT_EQ(nmi(std::vector<int>{3, 3, 3}, std::vector<int>{1, 1, 1}), 1.0);
}

TEST(Acc, Examples) {
    const std::vector<int> t{0, 0, 1, 1};
    EXPECT_EQ(acc(t, t), 1.0);
    EXPECT_EQ(acc(t, std::vector<int>{1, 1, 0, 0}), 1.0);
    EXPECT_DOUBLE_EQ(acc(t, std::vector<int>{0, 1, 1, 1}), 0.75);
    EXPECT_DOUBLE_EQ(oracle::acc(t, std::vector<int>{0, 1, 1, 1}), 0.75);
}

TEST(Clustering, MatchBruteForceOracles) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> n_dist(2, 12), k_dist(1, 4);
    for (int trial = 0; trial < 300; ++trial) {
        const auto n = static_cast<std::size_t>(n_dist(rng));
        const auto t = random_labels(rng, n, k_dist(rng));
        const auto p = random_labels(rng, n, k_dist(rng));
        EXPECT_NEAR(rand_index(t, p), oracle::rand_index(t, p), 1e-12);
        EXPECT_NEAR(nmi(t, p), oracle::nmi(t, p), 1e-12);
        EXPECT_NEAR(acc(t, p), oracle::acc(t, p), 1e-12);
    }
}

TEST(Clustering, InvariantUnderRelabeling) {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        const auto t = random_labels(rng, 20, 4);
        const auto p = random_labels(rng, 20, 4);
        std::vector<int> sigma{0, 1, 2, 3};
        std::shuffle(sigma.begin(), sigma.end(), rng);
        const auto q = permuted(p, sigma);
        const auto u = permuted(t, sigma);
        EXPECT_NEAR(rand_index(t, p), rand_index(u, q), 1e-15);
        EXPECT_NEAR(nmi(t, p), nmi(t, q), 1e-12);
        EXPECT_NEAR(acc(t, p), acc(u, p), 1e-15);
    }
}

TEST(Clustering, AccAtLeastLargestClassShare) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const auto t = random_labels(rng, 30, 4);
        const auto p = random_labels(rng, 30, 3);
        EXPECT_GE(acc(t, p), 1.0 / 4.0);
    }
}

TEST(Clustering, HungarianMatchesPermutationsOnLargerTables) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const auto t = random_labels(rng, 60, 6);
        const auto p = random_labels(rng, 60, 6);
        EXPECT_NEAR(acc(t, p), oracle::acc(t, p), 1e-12);
    }
}

TEST(Histogram, SingleBinMass) {
    const std::vector<double> v(50, 0.42);
    const auto h = histogram(v, 10, 0.0, 1.0);
    EXPECT_NEAR(h.probs[4], 1.0, 1e-8);
    for (std::size_t i = 0; i < 10; ++i)
        if (i != 4) EXPECT_LT(h.probs[i], 2e-9);
}

TEST(Histogram, NormalizedAndUniformConcentration) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(100000);
    for (auto& x : v) x = u(rng);
    const auto h = histogram(v, 10, 0.0, 1.0);
    double s = 0;
    for (double p : h.probs) {
        EXPECT_NEAR(p, 0.1, 0.01);
        s += p;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    EXPECT_THROW(histogram(std::vector<double>{}, 10, 0.0, 1.0), ConfigError);
}

TEST(Histogram, OutOfRangeValuesClipToEdges) {
    const auto h = histogram(std::vector<double>{-3.0, 7.0}, 4, 0.0, 1.0);
    EXPECT_NEAR(h.probs[0], 0.5, 1e-8);
    EXPECT_NEAR(h.probs[3], 0.5, 1e-8);
}

TEST(Divergence, Examples) {
    const DiscreteDist p({0.5, 0.5}), q({0.25, 0.75});
    EXPECT_EQ(kl_divergence(p, p), 0.0);
    EXPECT_NEAR(kl_divergence(p, q), oracle::kl({0.5, 0.5}, {0.25, 0.75}), 1e-15);
    EXPECT_NEAR(kl_divergence(p, q), 0.1438, 1e-4);

    EXPECT_EQ(js_divergence(p, p), 0.0);
    EXPECT_NEAR(js_divergence(DiscreteDist({1.0, 0.0}), DiscreteDist({0.0, 1.0})), std::log(2.0), 1e-15);
    const DiscreteDist one({1.0, 0.0});
    EXPECT_NEAR(js_divergence(one, p), oracle::js({1.0, 0.0}, {0.5, 0.5}), 1e-15);
    EXPECT_NEAR(js_divergence(one, p), 0.2158, 1e-4);

    EXPECT_EQ(wasserstein1(p, p), 0.0);
    const DiscreteDist four({0.25, 0.25, 0.25, 0.25});
    EXPECT_THROW(kl_divergence(p, four), ConfigError);
    EXPECT_THROW(js_divergence(p, four), ConfigError);
    EXPECT_THROW(wasserstein1(p, four), ConfigError);
    EXPECT_THROW(DiscreteDist({0.25, 0.25, 0.0, 0.0}), ConfigError);
}

TEST(Divergence, WassersteinTransportExamples) {
    // Point masses in the first and last of K bins sit one bin width short of
    // the interval ends, so the distance is 1 - 1/K.
    for (std::size_t k : {10u, 100u, 1000u}) {
        std::vector<double> a(k, 0.0), b(k, 0.0);
        a.front() = 1.0;
        b.back() = 1.0;
        const double w = wasserstein1(DiscreteDist(a), DiscreteDist(b));
        EXPECT_NEAR(w, 1.0 - 1.0 / static_cast<double>(k), 1e-12);
        EXPECT_NEAR(w, 1.0, 1.0 / static_cast<double>(k) + 1e-12);
    }
    std::vector<double> lo(10, 0.0), hi(10, 0.0);
    for (int i = 0; i < 5; ++i) lo[static_cast<std::size_t>(i)] = hi[static_cast<std::size_t>(i + 5)] = 0.2;
    EXPECT_NEAR(wasserstein1(DiscreteDist(lo), DiscreteDist(hi)), 0.5, 1e-12);
}

TEST(Divergence, SymmetryBoundsAndTriangle) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 200; ++trial) {
        const auto p = random_dist(rng, 8), q = random_dist(rng, 8), r = random_dist(rng, 8);
        EXPECT_NEAR(js_divergence(p, q), js_divergence(q, p), 1e-15);
        EXPECT_LE(js_divergence(p, q), std::log(2.0));
        EXPECT_GE(kl_divergence(p, q), 0.0);
        EXPECT_NEAR(kl_divergence(p, p), 0.0, 1e-12);
        EXPECT_LE(wasserstein1(p, r), wasserstein1(p, q) + wasserstein1(q, r) + 1e-12);
    }
}

TEST(KMeans, OneClusterPerPoint) {
    Matrix x(5, 1);
    x << 0.0, 1.0, 2.0, 3.0, 4.0;
    Rng rng(7);
    const auto l = kmeans_plusplus(x, 5, rng);
    EXPECT_EQ(acc(std::vector<int>{0, 1, 2, 3, 4}, l), 1.0);
    EXPECT_THROW(kmeans_plusplus(x, 6, rng), ConfigError);
}

TEST(KMeans, SeparatedBlobsAndDeterminism) {
    Rng rng(8);
    std::normal_distribution<double> n(0.0, 0.1);
    Matrix x(200, 1);
    std::vector<int> truth(200);
    for (int i = 0; i < 200; ++i) {
        truth[static_cast<std::size_t>(i)] = i % 2;
        x(i, 0) = (i % 2 ? 10.0 : 0.0) + n(rng);
    }
    Rng a(9), b(9);
    const auto la = kmeans_plusplus(x, 2, a);
    EXPECT_EQ(acc(truth, la), 1.0);
    EXPECT_EQ(la, kmeans_plusplus(x, 2, b));
}

TEST(Entropy, Values) {
    EXPECT_NEAR(entropy(std::vector<double>{0.25, 0.25, 0.25, 0.25}), std::log(4.0), 1e-15);
    EXPECT_EQ(entropy(std::vector<double>{1.0, 0.0}), 0.0);
}
