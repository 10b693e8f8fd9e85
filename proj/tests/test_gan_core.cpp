#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fsgan/gan.hpp"
#include "oracles.hpp"

using namespace fsgan;

namespace {

const double kLn2 = std::log(2.0);

/// Head whose trunk is the identity on a 1-wide record and whose heads are
/// constant: D(x) = d, C(x) = softmax(logits).
SharedHead constant_head(double d, std::vector<double> logits) {
    SharedHead h;
    h.trunk = make_zero_net({1, 1}, Activation::leaky_relu, Activation::identity);
    h.disc_head = make_zero_net({1, 1}, Activation::leaky_relu, Activation::logistic);
    h.disc_head.params.biases[0][0] = std::log(d / (1.0 - d));
    h.cls_head = make_zero_net({1, static_cast<int>(logits.size())}, Activation::leaky_relu, Activation::softmax);
    for (std::size_t m = 0; m < logits.size(); ++m) h.cls_head.params.biases[0][static_cast<Eigen::Index>(m)] = logits[m];
    return h;
}

ArchConfig tiny_arch() {
    ArchConfig a;
    a.record_dim = 2;
    a.noise_dim = 4;
    a.generator_layers = 3;
    a.trunk_layers = 3;
    a.min_hidden = 6;
    return a;
}

LocalSite tiny_site(const TrainConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    const auto bank = make_generator_bank(cfg.arch, cfg.generator_count, rng);
    const auto head = make_shared_head(cfg.arch, cfg.generator_count, rng);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LabeledDataset ds;
    ds.records.resize(50, cfg.arch.record_dim);
    for (Eigen::Index i = 0; i < ds.records.size(); ++i) ds.records.data()[i] = u(rng);
    return make_site(0, ds, bank, head, cfg);
}

}  // namespace

TEST(Noise, ShapeAndDeterminism) {
    Rng a(5), b(5);
    const Batch z = sample_noise(100, 5, a);
    EXPECT_EQ(z.rows(), 5);
    EXPECT_EQ(z.cols(), 100);
    EXPECT_TRUE(identical(z, sample_noise(100, 5, b)));
}

TEST(Noise, MeanNearZero) {
    Rng rng(6);
    const Batch z = sample_noise(1, 100000, rng);
    EXPECT_LE(std::abs(z.mean()), 0.02);
}

TEST(Noise, GeneratorInputWidthIsNoiseDim) {
    Rng rng(7);
    ArchConfig arch;
    arch.record_dim = 8;
    const auto bank = make_generator_bank(arch, 2, rng);
    EXPECT_EQ(bank.noise_dim, 100);
    for (const auto& g : bank.generators) EXPECT_EQ(g.input_dim(), 100);
}

TEST(Synthesize, DegenerateMixingUsesOneGenerator) {
    Rng rng(8);
    auto bank = make_generator_bank(tiny_arch(), 3, rng);
    bank.mixing = {1.0, 0.0, 0.0};
    const auto s = synthesize_batch(bank, 40, rng);
    for (int id : s.generator_ids) EXPECT_EQ(id, 0);
}

TEST(Synthesize, UniformMixingCountsConcentrate) {
    Rng rng(9);
    const auto bank = make_generator_bank(tiny_arch(), 3, rng);
    const auto s = synthesize_batch(bank, 30000, rng);
    std::array<int, 3> c{};
    for (int id : s.generator_ids) ++c[static_cast<std::size_t>(id)];
    for (int v : c) EXPECT_NEAR(v, 10000, 300);
}

TEST(Synthesize, DefaultRecordWidth) {
    Rng rng(10);
    ArchConfig arch;
    arch.generator_layers = 2;
    const auto bank = make_generator_bank(arch, 1, rng);
    EXPECT_EQ(bank.record_dim(), 2500);
}

TEST(Synthesize, RowsMatchTheirGenerator) {
    Rng rng(11);
    const auto bank = make_generator_bank(tiny_arch(), 3, rng);
    const auto s = synthesize_batch(bank, 30, rng);
    for (int m = 0; m < 3; ++m) {
        const auto& rows = s.rows_of[static_cast<std::size_t>(m)];
        if (rows.empty()) continue;
        const Matrix y = mlp_predict(bank.generators[static_cast<std::size_t>(m)], s.activations[static_cast<std::size_t>(m)].input());
        for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_TRUE(identical(y.row(static_cast<Eigen::Index>(i)), s.samples.row(rows[i])));
    }
}

TEST(Losses, ClassifierValues) {
    const Batch x = Batch::Zero(4, 1);
    const std::vector<int> ids{0, 1, 2, 0};
    EXPECT_NEAR(classifier_loss(constant_head(0.5, {0, 0, 0}), x, ids), std::log(3.0), 1e-12);
    EXPECT_NEAR(classifier_loss(constant_head(0.5, {0, 0, 0, 0, 0, 0}), x, ids), std::log(6.0), 1e-12);
    Matrix certain = Matrix::Zero(4, 3);
    for (int b = 0; b < 4; ++b) certain(b, ids[static_cast<std::size_t>(b)]) = 1.0;
    EXPECT_EQ(classifier_loss_from_probs(certain, ids), 0.0);
}

TEST(Losses, DiscriminatorValues) {
    EXPECT_EQ(discriminator_loss_from_probs(Vector::Ones(3), Vector::Zero(3)), 0.0);
    EXPECT_NEAR(discriminator_loss(constant_head(0.5, {0, 0}), Batch::Zero(5, 1), Batch::Ones(5, 1)), 2 * kLn2, 1e-12);
    EXPECT_NEAR(discriminator_loss_from_probs(Vector::Constant(4, 0.9), Vector::Constant(4, 0.1)),
                -(std::log(0.9) + std::log(0.9)), 1e-12);
}

TEST(Losses, GeneratorValues) {
    const std::vector<int> ids{0, 1};
    Matrix certain(2, 2);
    certain << 1, 0, 0, 1;
    EXPECT_EQ(generator_loss_from_probs(Vector::Ones(2), certain, ids, 0.5), 0.0);
    EXPECT_NEAR(generator_loss(constant_head(0.5, {0, 0}), Batch::Zero(2, 1), ids, 0.0), kLn2, 1e-12);
    EXPECT_NEAR(generator_loss(constant_head(0.5, {0, 0}), Batch::Zero(2, 1), ids, 1.0), 2 * kLn2, 1e-12);
}

TEST(Losses, FiniteUnderSaturation) {
    Matrix zero = Matrix::Zero(2, 2);
    const std::vector<int> ids{0, 1};
    EXPECT_TRUE(std::isfinite(classifier_loss_from_probs(zero, ids)));
    EXPECT_TRUE(std::isfinite(discriminator_loss_from_probs(Vector::Zero(2), Vector::Ones(2))));
    EXPECT_TRUE(std::isfinite(generator_loss_from_probs(Vector::Zero(2), zero, ids, 5.0)));
}

TEST(Losses, MatchScalarRecomputationFromHeadOutputs) {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        auto toy = oracle::random_toy(rng, 2, 3);
        const auto fake = synthesize_batch(toy.bank, 7, rng);
        const Batch real = Batch::Random(7, 2).cwiseAbs();
        const double lambda = 0.1 + trial * 0.25;
        const auto fr = head_forward(toy.head, real);
        const auto ff = head_forward(toy.head, fake.samples);
        double lc = 0, ld = 0, lg = 0;
        for (int b = 0; b < 7; ++b) {
            const int m = fake.generator_ids[static_cast<std::size_t>(b)];
            const double c = ff.class_probs()(b, m);
            lc -= std::log(c) / 7;
            ld -= (std::log(fr.real_prob()[b]) + std::log(1 - ff.real_prob()[b])) / 7;
            lg -= (std::log(ff.real_prob()[b]) + lambda * std::log(c)) / 7;
        }
        EXPECT_NEAR(classifier_loss(toy.head, fake.samples, fake.generator_ids), lc, 1e-12);
        EXPECT_NEAR(discriminator_loss(toy.head, real, fake.samples), ld, 1e-12);
        EXPECT_NEAR(generator_loss(toy.head, fake.samples, fake.generator_ids, lambda), lg, 1e-12);
        const auto hg = head_gradients(toy.head, real, fake.samples, fake.generator_ids, lambda);
        EXPECT_NEAR(hg.loss_c, lc, 1e-12);
        EXPECT_NEAR(hg.loss_d, ld, 1e-12);
        EXPECT_NEAR(hg.loss_g, lg, 1e-12);
    }
}

TEST(Losses, ZeroLambdaDropsClassifierTerm) {
    std::mt19937_64 rng(13);
    auto toy = oracle::random_toy(rng, 2, 3);
    const auto fake = synthesize_batch(toy.bank, 9, rng);
    const auto f = head_forward(toy.head, fake.samples);
    double plain = 0;
    for (int b = 0; b < 9; ++b) plain -= std::log(f.real_prob()[b]) / 9;
    EXPECT_EQ(generator_loss(toy.head, fake.samples, fake.generator_ids, 0.0),
              generator_loss_from_probs(f.real_prob(), Matrix::Zero(9, 3), fake.generator_ids, 0.0));
    EXPECT_NEAR(generator_loss(toy.head, fake.samples, fake.generator_ids, 0.0), plain, 1e-12);
}

TEST(Gradients, MatchFiniteDifferencesForAllThreeLosses) {
    std::mt19937_64 rng(14);
    for (int trial = 0; trial < 30; ++trial) {
        const double lambda = std::array{0.1, 0.5, 5.0}[static_cast<std::size_t>(trial % 3)];
        const auto r = oracle::check_gan_gradients(rng, lambda);
        EXPECT_LE(r.loss_c, 1e-4);
        EXPECT_LE(r.loss_d, 1e-4);
        EXPECT_LE(r.loss_g, 1e-4);
        EXPECT_LE(r.trunk, 1e-4);
    }
}

TEST(Training, ZeroLearningRatesLeaveParametersUnchanged) {
    TrainConfig cfg;
    cfg.arch = tiny_arch();
    cfg.batch_size = 8;
    cfg.generator_opt.learning_rate = 0.0;
    cfg.head_opt.learning_rate = 0.0;
    LocalSite site = tiny_site(cfg, 15);
    const auto head = site.head;
    const auto bank = site.bank;
    for (int i = 0; i < 5; ++i) local_train_iteration(site, cfg);
    EXPECT_EQ(site.head.trunk, head.trunk);
    EXPECT_EQ(site.head.disc_head, head.disc_head);
    EXPECT_EQ(site.head.cls_head, head.cls_head);
    for (int m = 0; m < bank.size(); ++m) EXPECT_EQ(site.bank.generators[static_cast<std::size_t>(m)], bank.generators[static_cast<std::size_t>(m)]);
}

TEST(Training, Deterministic) {
    TrainConfig cfg;
    cfg.arch = tiny_arch();
    cfg.batch_size = 8;
    LocalSite a = tiny_site(cfg, 16), b = tiny_site(cfg, 16);
    for (int i = 0; i < 10; ++i) {
        const auto ra = local_train_iteration(a, cfg);
        const auto rb = local_train_iteration(b, cfg);
        EXPECT_EQ(ra.loss_c, rb.loss_c);
        EXPECT_EQ(ra.loss_g, rb.loss_g);
    }
    EXPECT_EQ(a.head.trunk, b.head.trunk);
    EXPECT_EQ(a.bank.generators[1], b.bank.generators[1]);
    EXPECT_EQ(a.trunk_opt, b.trunk_opt);
}

TEST(Training, HeadsUpdateBeforeGenerators) {
    TrainConfig seq, sim;
    seq.arch = sim.arch = tiny_arch();
    seq.batch_size = sim.batch_size = 8;
    sim.simultaneous_update = true;
    LocalSite a = tiny_site(seq, 17), b = tiny_site(sim, 17);
    local_train_iteration(a, seq);
    local_train_iteration(b, sim);
    EXPECT_EQ(a.head.trunk, b.head.trunk);
    EXPECT_FALSE(a.bank.generators[0] == b.bank.generators[0] && a.bank.generators[1] == b.bank.generators[1] &&
                 a.bank.generators[2] == b.bank.generators[2]);
}

TEST(Training, ToyTaskKeepsLossesFiniteAndDiscriminatorNearEquilibrium) {
    TrainConfig cfg;
    cfg.arch.record_dim = 1;
    cfg.arch.noise_dim = 8;
    cfg.arch.generator_layers = 3;
    cfg.arch.trunk_layers = 3;
    cfg.arch.min_hidden = 16;
    cfg.generator_count = 2;
    cfg.generator_opt.learning_rate = 1e-3;
    cfg.head_opt.learning_rate = 1e-3;
    Rng rng(18);
    LabeledDataset ds;
    ds.records.resize(400, 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 400; ++i) ds.records(i, 0) = i % 2 ? 0.1 + 0.1 * u(rng) : 0.8 + 0.1 * u(rng);
    const auto bank = make_generator_bank(cfg.arch, 2, rng);
    const auto head = make_shared_head(cfg.arch, 2, rng);
    LocalSite site = make_site(0, ds, bank, head, cfg);
    double late = 0;
    for (int i = 0; i < 500; ++i) {
        const auto r = local_train_iteration(site, cfg);
        ASSERT_TRUE(std::isfinite(r.loss_c) && std::isfinite(r.loss_d) && std::isfinite(r.loss_g));
        if (i >= 400) late += r.loss_d / 100;
    }
    EXPECT_NEAR(late, 2 * kLn2, 0.35);
}

TEST(PseudoLabel, ArgmaxAndTies) {
    Matrix p(2, 3);
    p << 0.1, 0.7, 0.2, 0.5, 0.5, 0.0;
    EXPECT_EQ(argmax_rows(p), (std::vector<int>{1, 0}));
    const SharedHead h = constant_head(0.5, {0.0, 0.0});
    EXPECT_EQ(pseudo_label(h, Matrix::Zero(3, 1)), (std::vector<int>{0, 0, 0}));
}

TEST(Oracle, OptimalClassifierValues) {
    const auto a = optimal_classifier_oracle(std::vector<double>{0.3, 0.7}, std::vector<double>{0.5, 0.25});
    EXPECT_NEAR(a[0], 0.15 / 0.325, 1e-15);
    EXPECT_NEAR(a[1], 0.175 / 0.325, 1e-15);
    EXPECT_NEAR(a[0], 0.461538461538, 1e-12);
    const auto b = optimal_classifier_oracle(std::vector<double>(4, 0.25), std::vector<double>(4, 2.0));
    for (double v : b) EXPECT_DOUBLE_EQ(v, 0.25);
    const auto c = optimal_classifier_oracle(std::vector<double>{0.2, 0.5, 0.3}, std::vector<double>{0.0, 3.3, 0.0});
    EXPECT_EQ(c, (std::vector<double>{0.0, 1.0, 0.0}));
    EXPECT_THROW(optimal_classifier_oracle(std::vector<double>{0.5, 0.5}, std::vector<double>{0.0, 0.0}), DomainError);
}

TEST(Oracle, GeneratorObjectiveValues) {
    const DiscreteDist g0({0.5, 0.5, 0.0, 0.0}), g1({0.0, 0.0, 0.5, 0.5}), data({0.25, 0.25, 0.25, 0.25});
    const std::vector<DiscreteDist> gens{g0, g1};
    const std::vector<double> pi{0.5, 0.5};
    for (double lambda : {0.1, 0.5, 5.0})
        EXPECT_NEAR(generator_objective_oracle(data, gens, pi, lambda), -lambda * kLn2, 1e-9);
    const std::vector<DiscreteDist> same{data, data};
    EXPECT_NEAR(generator_objective_oracle(data, same, pi, 0.5), 0.0, 1e-9);
    const double expected = 2 * oracle::js({1.0, 0.0}, {0.5, 0.5});
    const std::vector<DiscreteDist> half{DiscreteDist({0.5, 0.5})};
    EXPECT_NEAR(generator_objective_oracle(DiscreteDist({1.0, 0.0}), half, std::vector<double>{1.0}, 0.0), expected, 1e-12);
    EXPECT_NEAR(expected, 0.4315, 1e-4);
    const DiscreteDist other({0.5, 0.5}, {0.0, 0.4, 1.0});
    const std::vector<DiscreteDist> mismatched{other};
    EXPECT_THROW(generator_objective_oracle(DiscreteDist({1.0, 0.0}), mismatched, std::vector<double>{1.0}, 0.5), ConfigError);
}

TEST(Oracle, ObjectiveDecreasesInLambdaWhenGeneratorsDiffer) {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> u(0.01, 1.0);
    for (int trial = 0; trial < 100; ++trial) {
        auto random_dist = [&] {
            std::vector<double> p(6);
            for (auto& v : p) v = u(rng);
            const double s = std::accumulate(p.begin(), p.end(), 0.0);
            for (auto& v : p) v /= s;
            p.back() = 1.0 - std::accumulate(p.begin(), p.end() - 1, 0.0);
            return DiscreteDist(p);
        };
        const std::vector<DiscreteDist> gens{random_dist(), random_dist(), random_dist()};
        const std::vector<double> pi{0.2, 0.3, 0.5};
        const auto data = random_dist();
        EXPECT_GT(generator_objective_oracle(data, gens, pi, 0.5), generator_objective_oracle(data, gens, pi, 0.6));
    }
}
