#pragma once

// Local three-player game: a bank of M generators, a trunk shared by the
// discriminator and classifier heads, the mini-batch losses, one local
// training iteration, pseudo-labelling, and closed-form optima used as test
// oracles.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fsgan/data.hpp"
#include "fsgan/error.hpp"
#include "fsgan/metrics.hpp"
#include "fsgan/tensor_nn.hpp"

namespace fsgan {

inline constexpr double kProbFloor = 1e-12;
inline constexpr int kNoiseDim = 100;

enum class Scheme : std::uint8_t { c1 = 1, c2 = 2 };

inline const char* to_string(Scheme s) { return s == Scheme::c1 ? "c1" : "c2"; }

/// Network shapes. Widths are interpolated geometrically and floored at
/// `min_hidden`.
struct ArchConfig {
    int record_dim = 2500;
    int noise_dim = kNoiseDim;
    int generator_layers = 8;
    int trunk_layers = 6;  // including the head layer
    int min_hidden = 32;
    double leaky_slope = kDefaultLeakySlope;
    Activation generator_output = Activation::logistic;

    std::vector<int> generator_dims() const {
        return geometric_widths(noise_dim, record_dim, generator_layers, min_hidden);
    }
    /// Trunk widths; the last entry is the feature width the heads consume.
    std::vector<int> trunk_dims() const {
        auto dims = geometric_widths(record_dim, 2, trunk_layers, min_hidden);
        dims.pop_back();
        return dims;
    }
};

struct GeneratorBank {
    std::vector<DenseNet> generators;
    std::vector<double> mixing;  // pi
    int noise_dim = kNoiseDim;

    int size() const { return static_cast<int>(generators.size()); }
    int record_dim() const { return generators.front().output_dim(); }

    void validate() const {
        if (generators.empty()) throw ConfigError("generator bank is empty");
        if (mixing.size() != generators.size()) throw ConfigError("mixing weights do not match generator count");
        double s = 0.0;
        for (double p : mixing) {
            if (!(p >= 0.0)) throw ConfigError("negative mixing weight");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-12) throw ConfigError("mixing weights must sum to 1");
        for (const auto& g : generators)
            if (g.input_dim() != noise_dim || g.output_dim() != record_dim())
                throw ShapeError("generators disagree on input/output dims");
    }
};

/// Trunk parameters (theta) shared by a 1-unit logistic discriminator head and
/// an M-unit softmax classifier head.
struct SharedHead {
    DenseNet trunk;
    DenseNet disc_head;
    DenseNet cls_head;

    int record_dim() const { return trunk.input_dim(); }
    int generator_count() const { return cls_head.output_dim(); }
    std::size_t parameter_count() const {
        return trunk.parameter_count() + disc_head.parameter_count() + cls_head.parameter_count();
    }
};

inline GeneratorBank make_generator_bank(const ArchConfig& arch, int generators, Rng& rng) {
    if (generators < 1) throw ConfigError("need at least one generator");
    GeneratorBank bank;
    bank.noise_dim = arch.noise_dim;
    for (int m = 0; m < generators; ++m)
        bank.generators.push_back(make_dense_net(arch.generator_dims(), Activation::leaky_relu, arch.generator_output,
                                                 rng, arch.leaky_slope));
    bank.mixing.assign(static_cast<std::size_t>(generators), 1.0 / generators);
    return bank;
}

inline SharedHead make_shared_head(const ArchConfig& arch, int generators, Rng& rng) {
    SharedHead h;
    const auto dims = arch.trunk_dims();
    h.trunk = make_dense_net(dims, Activation::leaky_relu, Activation::leaky_relu, rng, arch.leaky_slope);
    h.disc_head = make_dense_net({dims.back(), 1}, Activation::leaky_relu, Activation::logistic, rng, arch.leaky_slope);
    h.cls_head =
        make_dense_net({dims.back(), generators}, Activation::leaky_relu, Activation::softmax, rng, arch.leaky_slope);
    return h;
}

struct TrainConfig {
    double lambda = 0.5;
    int batch_size = 64;
    int local_iterations = 200;
    int rounds = 30;
    Scheme scheme = Scheme::c1;
    int site_count = 1;
    int generator_count = 3;
    AdamConfig generator_opt{.learning_rate = 2.5e-5};
    AdamConfig head_opt{.learning_rate = 1e-4};
    std::uint64_t seed = 1;
    /// Permit lambda = 0 (classifier-free ablation).
    bool ablation = false;
    /// Generator gradient computed from the pre-update heads.
    bool simultaneous_update = false;
    bool reset_adam_on_broadcast = false;
    /// Fraction of sites uploading each round; 1 = everyone.
    double participation = 1.0;
    int threads = 1;
    ArchConfig arch{};

    void validate() const {
        if (!(lambda > 0.0) && !(ablation && lambda == 0.0))
            throw ConfigError("lambda must be > 0 (lambda = 0 only in ablation mode)");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (local_iterations < 0 || rounds < 0) throw ConfigError("iterations and rounds must be >= 0");
        if (site_count < 1 || generator_count < 1) throw ConfigError("need at least one site and one generator");
        if (!(participation > 0.0 && participation <= 1.0)) throw ConfigError("participation must be in (0,1]");
        if (threads < 1) throw ConfigError("threads must be >= 1");
        for (const auto* o : {&generator_opt, &head_opt})
            if (o->learning_rate < 0.0 || !(o->beta1 > 0.0 && o->beta1 < 1.0) || !(o->beta2 > 0.0 && o->beta2 < 1.0))
                throw ConfigError("invalid Adam settings");
    }
};

/// Deterministic per-site stream derived from (global seed, site id).
inline Rng site_rng(std::uint64_t seed, int site_id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(site_id), 0x5EEDu};
    return Rng(seq);
}

struct LocalSite {
    int site_id = 0;
    LabeledDataset dataset;
    GeneratorBank bank;
    SharedHead head;
    AdamState trunk_opt, disc_opt, cls_opt;
    std::vector<AdamState> generator_opt;
    Rng rng;

    void reset_optimizers() {
        trunk_opt.reset();
        disc_opt.reset();
        cls_opt.reset();
        for (auto& o : generator_opt) o.reset();
    }
};

inline LocalSite make_site(int site_id, LabeledDataset dataset, GeneratorBank bank, SharedHead head,
                           const TrainConfig& cfg) {
    bank.validate();
    if (dataset.record_dim() != head.record_dim() || dataset.record_dim() != bank.record_dim())
        throw ShapeError("site " + std::to_string(site_id) + ": dataset dim does not match the model");
    LocalSite s;
    s.site_id = site_id;
    s.dataset = std::move(dataset);
    s.trunk_opt = AdamState::for_params(head.trunk.params, cfg.head_opt);
    s.disc_opt = AdamState::for_params(head.disc_head.params, cfg.head_opt);
    s.cls_opt = AdamState::for_params(head.cls_head.params, cfg.head_opt);
    for (const auto& g : bank.generators) s.generator_opt.push_back(AdamState::for_params(g.params, cfg.generator_opt));
    s.bank = std::move(bank);
    s.head = std::move(head);
    s.rng = site_rng(cfg.seed, site_id);
    return s;
}

// ---------------------------------------------------------------------------
// Sampling

/// B x noise_dim standard normal draws, filled row by row.
inline Batch sample_noise(int noise_dim, int batch, Rng& rng) {
    if (batch < 1) throw ConfigError("sample_noise: batch must be >= 1");
    std::normal_distribution<double> n01(0.0, 1.0);
    Batch z(batch, noise_dim);
    for (int b = 0; b < batch; ++b)
        for (int j = 0; j < noise_dim; ++j) z(b, j) = n01(rng);
    return z;
}

/// Fake mini-batch plus what the generator update needs to backpropagate.
struct SynthesizedBatch {
    Batch samples;
    std::vector<int> generator_ids;
    std::vector<std::vector<int>> rows_of;  // rows_of[m]: batch rows produced by generator m
    std::vector<Activations> activations;   // per generator; empty when unused
};

/// Each row's generator id is drawn i.i.d. from Categorical(pi); each used
/// generator then maps fresh noise for its rows.
inline SynthesizedBatch synthesize_batch(const GeneratorBank& bank, int batch, Rng& rng) {
    if (batch < 1) throw ConfigError("synthesize_batch: batch must be >= 1");
    const int m_count = bank.size();
    SynthesizedBatch out;
    out.generator_ids.resize(static_cast<std::size_t>(batch));
    std::discrete_distribution<int> pick(bank.mixing.begin(), bank.mixing.end());
    for (auto& id : out.generator_ids) id = pick(rng);

    out.rows_of.resize(static_cast<std::size_t>(m_count));
    for (int b = 0; b < batch; ++b) out.rows_of[static_cast<std::size_t>(out.generator_ids[static_cast<std::size_t>(b)])].push_back(b);

    out.samples.resize(batch, bank.record_dim());
    out.activations.resize(static_cast<std::size_t>(m_count));
    for (int m = 0; m < m_count; ++m) {
        const auto& rows = out.rows_of[static_cast<std::size_t>(m)];
        if (rows.empty()) continue;
        const Batch z = sample_noise(bank.noise_dim, static_cast<int>(rows.size()), rng);
        out.activations[static_cast<std::size_t>(m)] = mlp_forward(bank.generators[static_cast<std::size_t>(m)], z);
        const Matrix& x = out.activations[static_cast<std::size_t>(m)].output();
        for (std::size_t i = 0; i < rows.size(); ++i) out.samples.row(rows[i]) = x.row(static_cast<Eigen::Index>(i));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Head evaluation and losses

struct HeadForward {
    Activations trunk;
    Activations disc;
    Activations cls;

    /// D(x) per row.
    Vector real_prob() const { return disc.output().col(0); }
    /// C(x), one softmax row per sample.
    const Matrix& class_probs() const { return cls.output(); }
};

inline HeadForward head_forward(const SharedHead& head, const Batch& x) {
    HeadForward f;
    f.trunk = mlp_forward(head.trunk, x);
    f.disc = mlp_forward(head.disc_head, f.trunk.output());
    f.cls = mlp_forward(head.cls_head, f.trunk.output());
    return f;
}

inline double safe_log(double p) { return std::log(std::max(p, kProbFloor)); }

/// -(1/B) sum_b log C^{m_b}(x_b)
inline double classifier_loss_from_probs(const Matrix& class_probs, std::span<const int> ids) {
    if (static_cast<std::size_t>(class_probs.rows()) != ids.size()) throw ShapeError("classifier loss: id count");
    double s = 0.0;
    for (std::size_t b = 0; b < ids.size(); ++b) s -= safe_log(class_probs(static_cast<Eigen::Index>(b), ids[b]));
    return s / static_cast<double>(ids.size());
}

/// -(1/B) sum_b [log D(x_b) + log(1 - D(xhat_b))]
inline double discriminator_loss_from_probs(const Vector& d_real, const Vector& d_fake) {
    if (d_real.size() == 0 || d_fake.size() == 0) throw ShapeError("discriminator loss: empty batch");
    double s = 0.0;
    for (Eigen::Index b = 0; b < d_real.size(); ++b) s -= safe_log(d_real[b]);
    for (Eigen::Index b = 0; b < d_fake.size(); ++b) s -= safe_log(1.0 - d_fake[b]);
    // Both sums are averaged over B; the batches have equal size in training.
    return s / static_cast<double>(d_real.size());
}

/// -(1/B) sum_b [log D(xhat_b) + lambda log C^{m_b}(xhat_b)]
inline double generator_loss_from_probs(const Vector& d_fake, const Matrix& class_probs, std::span<const int> ids,
                                        double lambda) {
    if (static_cast<std::size_t>(d_fake.size()) != ids.size()) throw ShapeError("generator loss: id count");
    double s = 0.0;
    for (std::size_t b = 0; b < ids.size(); ++b) {
        s -= safe_log(d_fake[static_cast<Eigen::Index>(b)]);
        if (lambda != 0.0) s -= lambda * safe_log(class_probs(static_cast<Eigen::Index>(b), ids[b]));
    }
    return s / static_cast<double>(ids.size());
}

inline double classifier_loss(const SharedHead& head, const Batch& samples, std::span<const int> ids) {
    return classifier_loss_from_probs(head_forward(head, samples).class_probs(), ids);
}

inline double discriminator_loss(const SharedHead& head, const Batch& real, const Batch& fake) {
    if (real.cols() != fake.cols()) throw ShapeError("discriminator loss: record dims differ");
    return discriminator_loss_from_probs(head_forward(head, real).real_prob(), head_forward(head, fake).real_prob());
}

inline double generator_loss(const SharedHead& head, const Batch& fake, std::span<const int> ids, double lambda) {
    const auto f = head_forward(head, fake);
    return generator_loss_from_probs(f.real_prob(), f.class_probs(), ids, lambda);
}

// ---------------------------------------------------------------------------
// Gradients. Seeds are taken at the head pre-activations (sigma - y,
// softmax - onehot), i.e. the gradient of the unclamped log-likelihood.

struct HeadGradients {
    Gradients trunk, disc, cls;
    double loss_c = 0.0, loss_d = 0.0, loss_g = 0.0;
};

/// Gradient of L_C + L_D with respect to theta (trunk and both heads). The
/// generator loss at the same parameters is reported alongside.
inline HeadGradients head_gradients(const SharedHead& head, const Batch& real, const Batch& fake,
                                    std::span<const int> ids, double lambda = 0.0) {
    const Eigen::Index nr = real.rows(), nf = fake.rows();
    if (static_cast<std::size_t>(nf) != ids.size()) throw ShapeError("head_gradients: id count");
    Batch x(nr + nf, real.cols());
    x.topRows(nr) = real;
    x.bottomRows(nf) = fake;

    const Activations trunk = mlp_forward(head.trunk, x);
    const Matrix& feats = trunk.output();
    const Activations disc = mlp_forward(head.disc_head, feats);
    const Matrix fake_feats = feats.bottomRows(nf);
    const Activations cls = mlp_forward(head.cls_head, fake_feats);

    HeadGradients g;
    g.loss_d = discriminator_loss_from_probs(disc.output().topRows(nr).col(0), disc.output().bottomRows(nf).col(0));
    g.loss_c = classifier_loss_from_probs(cls.output(), ids);
    g.loss_g = generator_loss_from_probs(disc.output().bottomRows(nf).col(0), cls.output(), ids, lambda);

    const double inv_b = 1.0 / static_cast<double>(nr);
    Matrix seed_d = disc.output() * inv_b;
    seed_d.topRows(nr).array() -= inv_b;  // real rows: (D - 1)/B, fake rows: D/B
    Matrix seed_c = cls.output() / static_cast<double>(nf);
    for (Eigen::Index b = 0; b < nf; ++b) seed_c(b, ids[static_cast<std::size_t>(b)]) -= 1.0 / static_cast<double>(nf);

    auto bd = mlp_backward(head.disc_head, disc, seed_d, SeedKind::preactivation);
    auto bc = mlp_backward(head.cls_head, cls, seed_c, SeedKind::preactivation);
    Matrix feat_grad = std::move(bd.input_grad);
    feat_grad.bottomRows(nf) += bc.input_grad;
    auto bt = mlp_backward(head.trunk, trunk, feat_grad, SeedKind::output);
    g.trunk = std::move(bt.grads);
    g.disc = std::move(bd.grads);
    g.cls = std::move(bc.grads);
    return g;
}

/// dL_G/d(xhat) for every fake row, through the (frozen) heads.
inline Matrix generator_sample_gradient(const SharedHead& head, const Batch& fake, std::span<const int> ids,
                                        double lambda, double* loss_out = nullptr) {
    const auto f = head_forward(head, fake);
    const double inv_b = 1.0 / static_cast<double>(fake.rows());
    if (loss_out) *loss_out = generator_loss_from_probs(f.real_prob(), f.class_probs(), ids, lambda);

    Matrix seed_d = (f.disc.output().array() - 1.0) * inv_b;
    Matrix seed_c = f.cls.output() * (lambda * inv_b);
    for (Eigen::Index b = 0; b < fake.rows(); ++b) seed_c(b, ids[static_cast<std::size_t>(b)]) -= lambda * inv_b;

    auto bd = mlp_backward(head.disc_head, f.disc, seed_d, SeedKind::preactivation);
    Matrix feat_grad = std::move(bd.input_grad);
    if (lambda != 0.0) feat_grad += mlp_backward(head.cls_head, f.cls, seed_c, SeedKind::preactivation).input_grad;
    return mlp_backward(head.trunk, f.trunk, feat_grad, SeedKind::output).input_grad;
}

/// Per-generator parameter gradients of L_G; generators with no rows in the
/// batch get an empty entry.
inline std::vector<std::optional<Gradients>> generator_gradients(const GeneratorBank& bank,
                                                                 const SynthesizedBatch& fake,
                                                                 const Matrix& sample_grad) {
    std::vector<std::optional<Gradients>> out(static_cast<std::size_t>(bank.size()));
    for (int m = 0; m < bank.size(); ++m) {
        const auto& rows = fake.rows_of[static_cast<std::size_t>(m)];
        if (rows.empty()) continue;
        Matrix seed(static_cast<Eigen::Index>(rows.size()), sample_grad.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) seed.row(static_cast<Eigen::Index>(i)) = sample_grad.row(rows[i]);
        out[static_cast<std::size_t>(m)] = mlp_backward(bank.generators[static_cast<std::size_t>(m)],
                                                        fake.activations[static_cast<std::size_t>(m)], seed)
                                               .grads;
    }
    return out;
}

struct IterationReport {
    double loss_c = 0.0;
    double loss_d = 0.0;
    double loss_g = 0.0;
};

/// One local iteration: real and fake mini-batches, a theta step on
/// L_C + L_D, then an omega step on L_G for every generator that produced a
/// sample. Losses are measured before either update.
inline IterationReport local_train_iteration(LocalSite& site, const TrainConfig& cfg) {
    const Batch real = sample_minibatch(site.dataset, cfg.batch_size, site.rng);
    const SynthesizedBatch fake = synthesize_batch(site.bank, cfg.batch_size, site.rng);

    IterationReport rep;
    HeadGradients hg = head_gradients(site.head, real, fake.samples, fake.generator_ids, cfg.lambda);
    rep.loss_c = hg.loss_c;
    rep.loss_d = hg.loss_d;
    rep.loss_g = hg.loss_g;
    if (!std::isfinite(rep.loss_c) || !std::isfinite(rep.loss_d) || !std::isfinite(rep.loss_g))
        throw DivergenceError("non-finite loss").with_site(site.site_id);

    Matrix sample_grad;
    if (cfg.simultaneous_update)
        sample_grad = generator_sample_gradient(site.head, fake.samples, fake.generator_ids, cfg.lambda);

    adam_step(site.head.trunk, hg.trunk, site.trunk_opt);
    adam_step(site.head.disc_head, hg.disc, site.disc_opt);
    adam_step(site.head.cls_head, hg.cls, site.cls_opt);

    if (!cfg.simultaneous_update)
        sample_grad = generator_sample_gradient(site.head, fake.samples, fake.generator_ids, cfg.lambda);
    const auto gen_grads = generator_gradients(site.bank, fake, sample_grad);
    for (std::size_t m = 0; m < gen_grads.size(); ++m)
        if (gen_grads[m]) adam_step(site.bank.generators[m], *gen_grads[m], site.generator_opt[m]);

    if (!site.head.trunk.params.all_finite() || !site.head.disc_head.params.all_finite() ||
        !site.head.cls_head.params.all_finite())
        throw DivergenceError("non-finite discriminator/classifier parameters").with_site(site.site_id);
    for (const auto& g : site.bank.generators)
        if (!g.params.all_finite()) throw DivergenceError("non-finite generator parameters").with_site(site.site_id);
    return rep;
}

// ---------------------------------------------------------------------------
// Pseudo-labels and evaluation helpers

/// Row-wise argmax of the classifier head; ties go to the lowest index.
inline std::vector<int> argmax_rows(const Matrix& probs) {
    std::vector<int> out(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        int best = 0;
        for (Eigen::Index c = 1; c < probs.cols(); ++c)
            if (probs(r, c) > probs(r, best)) best = static_cast<int>(c);
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

inline std::vector<int> pseudo_label(const SharedHead& head, const Matrix& records) {
    if (records.cols() != head.record_dim()) throw ShapeError("pseudo_label: record dim mismatch");
    const Matrix feats = mlp_predict(head.trunk, records);
    return argmax_rows(mlp_predict(head.cls_head, feats));
}

/// Fraction of records assigned to each generator id (length M, sums to 1).
inline std::vector<double> label_shares(std::span<const int> labels, int generators) {
    std::vector<double> share(static_cast<std::size_t>(generators), 0.0);
    for (int l : labels) share[static_cast<std::size_t>(l)] += 1.0;
    for (auto& s : share) s /= static_cast<double>(labels.size());
    return share;
}

/// n samples from the bank in chunks; returns samples and their generator ids.
inline SynthesizedBatch sample_bank(const GeneratorBank& bank, int n, Rng& rng) {
    SynthesizedBatch out = synthesize_batch(bank, n, rng);
    out.activations.clear();
    out.rows_of.clear();
    return out;
}

// ---------------------------------------------------------------------------
// Closed-form optima

/// Optimal classifier output at a point: pi_m p_m(x) / sum_i pi_i p_i(x).
inline std::vector<double> optimal_classifier_oracle(std::span<const double> pi, std::span<const double> densities) {
    if (pi.size() != densities.size() || pi.empty()) throw ShapeError("oracle: pi and densities differ in length");
    double total = 0.0;
    for (std::size_t m = 0; m < pi.size(); ++m) {
        if (!(densities[m] >= 0.0) || !(pi[m] >= 0.0)) throw ConfigError("oracle: negative density or weight");
        total += pi[m] * densities[m];
    }
    if (total == 0.0) throw DomainError("oracle: every weighted density vanishes at this point");
    std::vector<double> out(pi.size());
    for (std::size_t m = 0; m < pi.size(); ++m) out[m] = pi[m] * densities[m] / total;
    return out;
}

/// sum_m pi_m P_m as a distribution on the shared bins.
inline DiscreteDist mixture_of(std::span<const DiscreteDist> dists, std::span<const double> pi) {
    if (dists.size() != pi.size() || dists.empty()) throw ShapeError("mixture_of: length mismatch");
    std::vector<double> p(dists.front().size(), 0.0);
    for (std::size_t m = 0; m < dists.size(); ++m) {
        require_same_bins(dists.front(), dists[m]);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += pi[m] * dists[m].probs[i];
    }
    double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) v /= s;
    return DiscreteDist(std::move(p), dists.front().edges);
}

/// Generalized Jensen-Shannon divergence: sum_m pi_m KL(P_m || sum_i pi_i P_i).
inline double generalized_jsd(std::span<const DiscreteDist> dists, std::span<const double> pi) {
    const DiscreteDist mix = mixture_of(dists, pi);
    double s = 0.0;
    for (std::size_t m = 0; m < dists.size(); ++m)
        if (pi[m] > 0.0) s += pi[m] * kl_divergence(dists[m], mix);
    return s;
}

/// Generator objective under optimal heads:
/// 2 JSD(P_data || P_model) - lambda JSD_pi(P_G1, ..., P_GM), in nats.
inline double generator_objective_oracle(const DiscreteDist& data, std::span<const DiscreteDist> generators,
                                         std::span<const double> pi, double lambda) {
    double s = 0.0;
    for (double p : pi) s += p;
    if (std::abs(s - 1.0) > 1e-12) throw ConfigError("oracle: pi must sum to 1");
    for (const auto& g : generators) require_same_bins(data, g);
    const DiscreteDist model = mixture_of(generators, pi);
    return 2.0 * js_divergence(data, model) - lambda * generalized_jsd(generators, pi);
}

}  // namespace fsgan
