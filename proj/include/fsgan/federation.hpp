#pragma once

// Federated coordination: weighted parameter averaging under schemes C-I
// (trunk, heads and generators) and C-II (trunk and heads only), broadcast,
// and the round loop.

#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "fsgan/data.hpp"
#include "fsgan/gan.hpp"
#include "fsgan/metrics.hpp"

namespace fsgan {

/// Parameters a site uploads. `generators` is only populated under C-I.
struct SiteParams {
    ParamTensors trunk, disc, cls;
    std::vector<ParamTensors> generators;
};

/// Aggregated model: theta_0 always, omega_0 only under C-I.
struct GlobalParams {
    ParamTensors trunk, disc, cls;
    std::optional<std::vector<ParamTensors>> generators;
};

inline SiteParams upload(const LocalSite& site, Scheme scheme) {
    SiteParams p{site.head.trunk.params, site.head.disc_head.params, site.head.cls_head.params, {}};
    if (scheme == Scheme::c1)
        for (const auto& g : site.bank.generators) p.generators.push_back(g.params);
    return p;
}

/// Weights renormalized to sum to 1.
inline std::vector<double> normalized(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("aggregation weights must be finite and >= 0");
        total += w;
    }
    if (!(total > 0.0)) throw ConfigError("aggregation weights sum to zero");
    std::vector<double> out(weights.begin(), weights.end());
    for (auto& w : out) w /= total;
    return out;
}

/// sum_d w_d * p_d, accumulated in site order.
inline ParamTensors weighted_sum(std::span<const ParamTensors* const> params, std::span<const double> weights) {
    for (const auto* p : params)
        if (!p->same_shape(*params.front())) throw ShapeError("aggregate: sites have different architectures");
    ParamTensors out = *params.front();
    auto scale_into = [](double* dst, const double* src, std::size_t n, double w, bool first) {
        for (std::size_t i = 0; i < n; ++i) dst[i] = first ? w * src[i] : dst[i] + w * src[i];
    };
    for (std::size_t d = 0; d < params.size(); ++d) {
        for (std::size_t l = 0; l < out.weights.size(); ++l) {
            scale_into(out.weights[l].data(), params[d]->weights[l].data(),
                       static_cast<std::size_t>(out.weights[l].size()), weights[d], d == 0);
            scale_into(out.biases[l].data(), params[d]->biases[l].data(), static_cast<std::size_t>(out.biases[l].size()),
                       weights[d], d == 0);
        }
    }
    return out;
}

inline GlobalParams aggregate(std::span<const SiteParams> sites, std::span<const double> weights, Scheme scheme) {
    if (sites.empty()) throw ConfigError("aggregate: no participating sites");
    if (weights.size() != sites.size()) throw ConfigError("aggregate: one weight per site required");
    const auto w = normalized(weights);

    auto collect = [&](auto member) {
        std::vector<const ParamTensors*> v;
        for (const auto& s : sites) v.push_back(&(s.*member));
        return v;
    };
    GlobalParams g;
    g.trunk = weighted_sum(collect(&SiteParams::trunk), w);
    g.disc = weighted_sum(collect(&SiteParams::disc), w);
    g.cls = weighted_sum(collect(&SiteParams::cls), w);
    if (scheme == Scheme::c1) {
        const std::size_t m = sites.front().generators.size();
        for (const auto& s : sites)
            if (s.generators.size() != m) throw ShapeError("aggregate: sites have different generator counts");
        std::vector<ParamTensors> gens;
        for (std::size_t k = 0; k < m; ++k) {
            std::vector<const ParamTensors*> v;
            for (const auto& s : sites) v.push_back(&s.generators[k]);
            gens.push_back(weighted_sum(v, w));
        }
        g.generators = std::move(gens);
    }
    return g;
}

/// theta_d <- theta_0 everywhere; under C-I also omega_d <- omega_0.
inline void broadcast(const GlobalParams& global, std::span<LocalSite> sites, Scheme scheme, bool reset_adam = false) {
    for (auto& s : sites) {
        if (!s.head.trunk.params.same_shape(global.trunk) || !s.head.disc_head.params.same_shape(global.disc) ||
            !s.head.cls_head.params.same_shape(global.cls))
            throw ShapeError("broadcast: site architecture differs from the global model");
        s.head.trunk.params = global.trunk;
        s.head.disc_head.params = global.disc;
        s.head.cls_head.params = global.cls;
        if (scheme == Scheme::c1) {
            if (!global.generators || global.generators->size() != s.bank.generators.size())
                throw ShapeError("broadcast: C-I needs one global generator per site generator");
            for (std::size_t m = 0; m < s.bank.generators.size(); ++m)
                s.bank.generators[m].params = (*global.generators)[m];
        }
        if (reset_adam) s.reset_optimizers();
    }
}

/// Aggregation weights p_d, scheme and per-round participant selection.
class Coordinator {
public:
    Coordinator(std::vector<double> site_weights, Scheme scheme, double participation = 1.0, std::uint64_t seed = 0)
        : weights_(normalized(site_weights)), scheme_(scheme), participation_(participation),
          rng_(site_rng(seed, -1)) {
        if (!(participation > 0.0 && participation <= 1.0)) throw ConfigError("participation must be in (0,1]");
    }

    /// p_d = |X_d| / sum |X_d|.
    static Coordinator by_dataset_size(std::span<const LocalSite> sites, Scheme scheme, double participation = 1.0,
                                       std::uint64_t seed = 0) {
        std::vector<double> w;
        for (const auto& s : sites) w.push_back(static_cast<double>(s.dataset.size()));
        return Coordinator(std::move(w), scheme, participation, seed);
    }

    /// Omega': every site, or a uniform sample without replacement.
    std::vector<int> select_participants() {
        const int n = static_cast<int>(weights_.size());
        std::vector<int> ids(static_cast<std::size_t>(n));
        std::iota(ids.begin(), ids.end(), 0);
        if (participation_ >= 1.0) return ids;
        const int k = std::clamp(static_cast<int>(std::lround(participation_ * n)), 1, n);
        std::shuffle(ids.begin(), ids.end(), rng_);
        ids.resize(static_cast<std::size_t>(k));
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    /// p_d restricted to the participants and renormalized.
    std::vector<double> effective_weights(std::span<const int> participants) const {
        std::vector<double> w;
        for (int d : participants) w.push_back(weights_.at(static_cast<std::size_t>(d)));
        return normalized(w);
    }

    const std::vector<double>& site_weights() const { return weights_; }
    Scheme scheme() const { return scheme_; }
    int round() const { return round_; }
    void advance() { ++round_; }

private:
    std::vector<double> weights_;
    Scheme scheme_;
    double participation_;
    Rng rng_;
    int round_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation of the global model

struct EvalOptions {
    const LabeledDataset* holdout = nullptr;  // records (+ labels) to pseudo-label
    int model_samples = 5000;
    std::size_t bins = 100;
    double lo = 0.0, hi = 1.0;
};

struct EvalMetrics {
    std::optional<double> nmi, acc, ri;  // need labels
    double js = 0.0, kl = 0.0, wasserstein = 0.0;
    std::vector<double> shares;  // pseudo-label share per generator
};

/// Pseudo-label the holdout with `head`, and compare holdout packet values
/// against samples pooled evenly from `banks`.
inline EvalMetrics evaluate_model(const SharedHead& head, std::span<const GeneratorBank* const> banks,
                                  const EvalOptions& opt, Rng& rng) {
    if (!opt.holdout) throw ConfigError("evaluate_model: no holdout set");
    const auto& data = *opt.holdout;
    if (data.record_dim() != head.record_dim()) throw ShapeError("evaluate_model: holdout dim differs from model");
    EvalMetrics m;
    const auto labels = pseudo_label(head, data.records);
    m.shares = label_shares(labels, head.generator_count());
    if (data.labels && data.size() >= 2) {
        m.nmi = nmi(*data.labels, labels);
        m.acc = acc(*data.labels, labels);
        m.ri = rand_index(*data.labels, labels);
    }
    std::vector<double> model_values;
    const int per_bank = std::max(1, opt.model_samples / static_cast<int>(banks.size()));
    for (const auto* bank : banks) {
        const auto s = sample_bank(*bank, per_bank, rng);
        const auto v = packet_values(s.samples);
        model_values.insert(model_values.end(), v.begin(), v.end());
    }
    const auto real = histogram(packet_values(data.records), opt.bins, opt.lo, opt.hi);
    const auto model = histogram(model_values, opt.bins, opt.lo, opt.hi);
    m.js = js_divergence(real, model);
    m.kl = kl_divergence(real, model);
    m.wasserstein = wasserstein1(real, model);
    return m;
}

// ---------------------------------------------------------------------------
// Rounds

struct SiteRoundStats {
    int site_id = 0;
    int iterations = 0;
    double loss_c = std::numeric_limits<double>::quiet_NaN();
    double loss_d = std::numeric_limits<double>::quiet_NaN();
    double loss_g = std::numeric_limits<double>::quiet_NaN();
};

struct RoundReport {
    int round = 0;  // 1-based
    std::vector<int> participants;
    std::vector<SiteRoundStats> sites;  // mean losses over the round's local iterations
    std::optional<EvalMetrics> global;
    std::size_t params_uploaded = 0;
    double seconds = 0.0;
};

namespace detail {

/// Run f(i) for i in [0, n) on at most `threads` workers; rethrows the
/// failure of the lowest index.
template <class F>
void parallel_for(int n, int threads, F&& f) {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    auto guarded = [&](int i) {
        try {
            f(i);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    };
    const int workers = std::clamp(threads, 1, std::max(1, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) guarded(i);
    } else {
        std::atomic<int> next{0};
        std::vector<std::jthread> pool;
        for (int t = 0; t < workers; ++t)
            pool.emplace_back([&] {
                for (int i = next++; i < n; i = next++) guarded(i);
            });
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace detail

/// Local training on every participant, then aggregate and broadcast.
inline RoundReport run_round(std::vector<LocalSite>& sites, Coordinator& coord, const TrainConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    RoundReport rep;
    rep.participants = coord.select_participants();
    rep.sites.resize(rep.participants.size());

    detail::parallel_for(static_cast<int>(rep.participants.size()), cfg.threads, [&](int k) {
        auto& site = sites[static_cast<std::size_t>(rep.participants[static_cast<std::size_t>(k)])];
        SiteRoundStats st;
        st.site_id = site.site_id;
        st.iterations = cfg.local_iterations;
        double c = 0.0, d = 0.0, g = 0.0;
        try {
            for (int i = 0; i < cfg.local_iterations; ++i) {
                const auto r = local_train_iteration(site, cfg);
                c += r.loss_c;
                d += r.loss_d;
                g += r.loss_g;
            }
        } catch (const DivergenceError& e) {
            if (e.site() >= 0) throw;
            throw e.with_site(site.site_id);
        }
        if (cfg.local_iterations > 0) {
            st.loss_c = c / cfg.local_iterations;
            st.loss_d = d / cfg.local_iterations;
            st.loss_g = g / cfg.local_iterations;
        }
        rep.sites[static_cast<std::size_t>(k)] = st;
    });

    std::vector<SiteParams> uploads;
    for (int d : rep.participants) {
        uploads.push_back(upload(sites[static_cast<std::size_t>(d)], coord.scheme()));
        const auto& u = uploads.back();
        rep.params_uploaded += u.trunk.size() + u.disc.size() + u.cls.size();
        for (const auto& g : u.generators) rep.params_uploaded += g.size();
    }
    const auto global = aggregate(uploads, coord.effective_weights(rep.participants), coord.scheme());
    broadcast(global, sites, coord.scheme(), cfg.reset_adam_on_broadcast);

    coord.advance();
    rep.round = coord.round();
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

/// Final global model. Under C-II the generators never leave their sites, so
/// `site_banks` holds every site's bank and `bank` is site 0's.
struct FederatedModel {
    Scheme scheme = Scheme::c1;
    SharedHead head;
    GeneratorBank bank;
    std::vector<GeneratorBank> site_banks;

    std::vector<const GeneratorBank*> sampling_banks() const {
        std::vector<const GeneratorBank*> out;
        if (scheme == Scheme::c1 || site_banks.empty()) {
            out.push_back(&bank);
        } else {
            for (const auto& b : site_banks) out.push_back(&b);
        }
        return out;
    }
};

struct TrainingResult {
    std::vector<RoundReport> reports;
    FederatedModel model;
};

inline FederatedModel snapshot_model(const std::vector<LocalSite>& sites, Scheme scheme) {
    FederatedModel m;
    m.scheme = scheme;
    m.head = sites.front().head;
    m.bank = sites.front().bank;
    if (scheme == Scheme::c2)
        for (const auto& s : sites) m.site_banks.push_back(s.bank);
    return m;
}

/// Every site starts from one global initialization drawn from cfg.seed.
inline std::vector<LocalSite> init_sites(const TrainConfig& cfg, std::vector<LabeledDataset> datasets) {
    cfg.validate();
    if (static_cast<int>(datasets.size()) != cfg.site_count) throw ConfigError("need exactly one dataset per site");
    Rng init(cfg.seed);
    const GeneratorBank bank = make_generator_bank(cfg.arch, cfg.generator_count, init);
    const SharedHead head = make_shared_head(cfg.arch, cfg.generator_count, init);
    std::vector<LocalSite> sites;
    for (int d = 0; d < cfg.site_count; ++d)
        sites.push_back(make_site(d, std::move(datasets[static_cast<std::size_t>(d)]), bank, head, cfg));
    return sites;
}

using RoundCallback = std::function<void(const RoundReport&, const std::vector<LocalSite>&)>;

/// J rounds of local training + coordination. The holdout (if any) is
/// evaluated after every round with its own RNG stream.
inline TrainingResult run_training(const TrainConfig& cfg, std::vector<LabeledDataset> datasets,
                                   const EvalOptions& eval = {}, const RoundCallback& on_round = {}) {
    auto sites = init_sites(cfg, std::move(datasets));
    auto coord = Coordinator::by_dataset_size(sites, cfg.scheme, cfg.participation, cfg.seed);
    Rng eval_rng = site_rng(cfg.seed, -2);

    TrainingResult result;
    for (int j = 0; j < cfg.rounds; ++j) {
        RoundReport rep = run_round(sites, coord, cfg);
        if (eval.holdout) {
            const auto model = snapshot_model(sites, cfg.scheme);
            rep.global = evaluate_model(model.head, model.sampling_banks(), eval, eval_rng);
        }
        if (on_round) on_round(rep, sites);
        result.reports.push_back(std::move(rep));
    }
    result.model = snapshot_model(sites, cfg.scheme);
    return result;
}

}  // namespace fsgan
