#pragma once

// Experiment configuration, orchestration and report files behind the
// `fsgan` command-line tool.
//
// Config files are flat `key = value` text; `#` starts a comment. Every key
// has a default (see config_keys()) and unknown keys are rejected.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fsgan/checkpoint.hpp"
#include "fsgan/data.hpp"
#include "fsgan/error.hpp"
#include "fsgan/federation.hpp"
#include "fsgan/gan.hpp"
#include "fsgan/metrics.hpp"

namespace fsgan {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;
inline constexpr int kExitEvaluation = 4;

// Stream ids passed to site_rng for experiment-level randomness. Sites use
// ids >= 0, the coordinator -1 and round evaluation -2.
inline constexpr int kStreamTrainData = -3;
inline constexpr int kStreamHoldout = -4;
inline constexpr int kStreamPartition = -5;
inline constexpr int kStreamBaseline = -6;
inline constexpr int kStreamReport = -7;

struct ExperimentConfig {
    TrainConfig train = [] {
        TrainConfig t;
        t.site_count = 3;
        return t;
    }();
    std::string data = "mixture";
    std::string components = "u:0:0.3,u:0.35:0.65,u:0.7:1";
    std::string proportions;
    int record_dim = 0;
    std::size_t samples = 6000;
    std::size_t holdout = 3000;
    double holdout_fraction = 0.2;
    std::string partition = "leave-one-out";
    std::string allow;
    std::size_t bins = 100;
    double range_lo = 0.0;
    double range_hi = 1.0;
    int eval_samples = 5000;
    int compare_seeds = 3;
    int kmeans_iters = 300;
    std::string out = "out";
};

// ---------------------------------------------------------------------------
// Parsing helpers

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto at = s.find(sep, start);
        out.push_back(trim(s.substr(start, at == std::string_view::npos ? std::string_view::npos : at - start)));
        if (at == std::string_view::npos) break;
        start = at + 1;
    }
    return out;
}

template <class T>
T parse_number(std::string_view key, std::string_view text) {
    const std::string s = trim(text);
    T v{};
    const auto* end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (s.empty() || ec != std::errc() || ptr != end)
        throw ConfigError(std::string(key) + ": cannot parse '" + s + "'");
    if constexpr (std::is_floating_point_v<T>)
        if (!std::isfinite(v)) throw ConfigError(std::string(key) + ": value must be finite");
    return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
    const std::string s = trim(text);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError(std::string(key) + ": expected a boolean, got '" + s + "'");
}

inline Scheme parse_scheme(std::string_view text) {
    const std::string s = trim(text);
    if (s == "c1" || s == "C-I") return Scheme::c1;
    if (s == "c2" || s == "C-II") return Scheme::c2;
    throw ConfigError("scheme: expected c1 or c2, got '" + s + "'");
}

/// Shortest text that parses back to exactly `v`.
inline std::string format_number(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config keys

struct ConfigKey {
    std::string name;
    std::string doc;
    std::function<void(ExperimentConfig&, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
    using detail::format_number;
    using detail::parse_bool;
    using detail::parse_number;
    using E = ExperimentConfig;
    auto str = [](std::string E::*m) {
        return std::pair{[m](E& c, std::string_view v) { c.*m = detail::trim(v); },
                         [m](const E& c) { return c.*m; }};
    };
    static const std::vector<ConfigKey> keys = [&] {
        std::vector<ConfigKey> k;
        auto add = [&](std::string name, std::string doc, auto set, auto get) {
            k.push_back({std::move(name), std::move(doc), set, get});
        };
        add("seed", "global seed (u64)", [](E& c, std::string_view v) { c.train.seed = parse_number<std::uint64_t>("seed", v); },
            [](const E& c) { return std::to_string(c.train.seed); });
        add("scheme", "coordination scheme: c1 (heads + generators) or c2 (heads only)",
            [](E& c, std::string_view v) { c.train.scheme = detail::parse_scheme(v); },
            [](const E& c) { return std::string(to_string(c.train.scheme)); });
        add("lambda", "classifier weight in the generator loss",
            [](E& c, std::string_view v) { c.train.lambda = parse_number<double>("lambda", v); },
            [](const E& c) { return format_number(c.train.lambda); });
        add("ablation", "allow lambda = 0 (classifier-free ablation)",
            [](E& c, std::string_view v) { c.train.ablation = parse_bool("ablation", v); },
            [](const E& c) { return std::string(c.train.ablation ? "true" : "false"); });
        add("sites", "number of sites N", [](E& c, std::string_view v) { c.train.site_count = parse_number<int>("sites", v); },
            [](const E& c) { return std::to_string(c.train.site_count); });
        add("generators", "generators per site M",
            [](E& c, std::string_view v) { c.train.generator_count = parse_number<int>("generators", v); },
            [](const E& c) { return std::to_string(c.train.generator_count); });
        add("rounds", "global rounds J", [](E& c, std::string_view v) { c.train.rounds = parse_number<int>("rounds", v); },
            [](const E& c) { return std::to_string(c.train.rounds); });
        add("local_iters", "local iterations per round I",
            [](E& c, std::string_view v) { c.train.local_iterations = parse_number<int>("local_iters", v); },
            [](const E& c) { return std::to_string(c.train.local_iterations); });
        add("batch", "mini-batch size B", [](E& c, std::string_view v) { c.train.batch_size = parse_number<int>("batch", v); },
            [](const E& c) { return std::to_string(c.train.batch_size); });
        add("threads", "worker threads for local training",
            [](E& c, std::string_view v) { c.train.threads = parse_number<int>("threads", v); },
            [](const E& c) { return std::to_string(c.train.threads); });
        add("participation", "fraction of sites uploading each round",
            [](E& c, std::string_view v) { c.train.participation = parse_number<double>("participation", v); },
            [](const E& c) { return format_number(c.train.participation); });
        add("lr_generator", "Adam learning rate of the generators",
            [](E& c, std::string_view v) { c.train.generator_opt.learning_rate = parse_number<double>("lr_generator", v); },
            [](const E& c) { return format_number(c.train.generator_opt.learning_rate); });
        add("lr_head", "Adam learning rate of the trunk, discriminator and classifier",
            [](E& c, std::string_view v) { c.train.head_opt.learning_rate = parse_number<double>("lr_head", v); },
            [](const E& c) { return format_number(c.train.head_opt.learning_rate); });
        add("beta1", "Adam beta1 (all networks)",
            [](E& c, std::string_view v) { c.train.generator_opt.beta1 = c.train.head_opt.beta1 = parse_number<double>("beta1", v); },
            [](const E& c) { return format_number(c.train.head_opt.beta1); });
        add("beta2", "Adam beta2 (all networks)",
            [](E& c, std::string_view v) { c.train.generator_opt.beta2 = c.train.head_opt.beta2 = parse_number<double>("beta2", v); },
            [](const E& c) { return format_number(c.train.head_opt.beta2); });
        add("simultaneous_update", "generator gradient from the pre-update heads",
            [](E& c, std::string_view v) { c.train.simultaneous_update = parse_bool("simultaneous_update", v); },
            [](const E& c) { return std::string(c.train.simultaneous_update ? "true" : "false"); });
        add("reset_adam", "reset Adam moments after every broadcast",
            [](E& c, std::string_view v) { c.train.reset_adam_on_broadcast = parse_bool("reset_adam", v); },
            [](const E& c) { return std::string(c.train.reset_adam_on_broadcast ? "true" : "false"); });
        add("noise_dim", "generator noise width",
            [](E& c, std::string_view v) { c.train.arch.noise_dim = parse_number<int>("noise_dim", v); },
            [](const E& c) { return std::to_string(c.train.arch.noise_dim); });
        add("generator_layers", "dense layers per generator",
            [](E& c, std::string_view v) { c.train.arch.generator_layers = parse_number<int>("generator_layers", v); },
            [](const E& c) { return std::to_string(c.train.arch.generator_layers); });
        add("trunk_layers", "discriminator/classifier depth including the head layer",
            [](E& c, std::string_view v) { c.train.arch.trunk_layers = parse_number<int>("trunk_layers", v); },
            [](const E& c) { return std::to_string(c.train.arch.trunk_layers); });
        add("min_hidden", "floor on hidden layer widths",
            [](E& c, std::string_view v) { c.train.arch.min_hidden = parse_number<int>("min_hidden", v); },
            [](const E& c) { return std::to_string(c.train.arch.min_hidden); });
        add("leaky_slope", "LeakyReLU negative slope",
            [](E& c, std::string_view v) { c.train.arch.leaky_slope = parse_number<double>("leaky_slope", v); },
            [](const E& c) { return format_number(c.train.arch.leaky_slope); });
        {
            auto [s, g] = str(&E::data);
            add("data", "'mixture' or the path of an FSGD / length-prefixed payload file", s, g);
        }
        {
            auto [s, g] = str(&E::components);
            add("components", "mixture components, comma separated: u:LO:HI (uniform) or g:CENTER:SIGMA", s, g);
        }
        {
            auto [s, g] = str(&E::proportions);
            add("proportions", "mixture weights, comma separated; empty means uniform", s, g);
        }
        add("record_dim", "record width; 0 = 1 for mixtures, stored width for FSGD, 2500 for raw payloads",
            [](E& c, std::string_view v) { c.record_dim = parse_number<int>("record_dim", v); },
            [](const E& c) { return std::to_string(c.record_dim); });
        add("samples", "mixture training records", [](E& c, std::string_view v) { c.samples = parse_number<std::size_t>("samples", v); },
            [](const E& c) { return std::to_string(c.samples); });
        add("holdout", "mixture held-out records", [](E& c, std::string_view v) { c.holdout = parse_number<std::size_t>("holdout", v); },
            [](const E& c) { return std::to_string(c.holdout); });
        add("holdout_fraction", "share of file records held out for evaluation",
            [](E& c, std::string_view v) { c.holdout_fraction = parse_number<double>("holdout_fraction", v); },
            [](const E& c) { return format_number(c.holdout_fraction); });
        {
            auto [s, g] = str(&E::partition);
            add("partition", "iid, leave-one-out (site d lacks component (K-1-d) mod K) or by-component", s, g);
        }
        {
            auto [s, g] = str(&E::allow);
            add("allow", "by-component allow-lists, e.g. 0,1;0,2;1,2", s, g);
        }
        add("bins", "histogram bins for distribution distances",
            [](E& c, std::string_view v) { c.bins = parse_number<std::size_t>("bins", v); },
            [](const E& c) { return std::to_string(c.bins); });
        add("range_lo", "histogram lower edge", [](E& c, std::string_view v) { c.range_lo = parse_number<double>("range_lo", v); },
            [](const E& c) { return format_number(c.range_lo); });
        add("range_hi", "histogram upper edge", [](E& c, std::string_view v) { c.range_hi = parse_number<double>("range_hi", v); },
            [](const E& c) { return format_number(c.range_hi); });
        add("eval_samples", "model samples drawn per evaluation",
            [](E& c, std::string_view v) { c.eval_samples = parse_number<int>("eval_samples", v); },
            [](const E& c) { return std::to_string(c.eval_samples); });
        add("compare_seeds", "seeds run by compare (seed, seed+1, ...)",
            [](E& c, std::string_view v) { c.compare_seeds = parse_number<int>("compare_seeds", v); },
            [](const E& c) { return std::to_string(c.compare_seeds); });
        add("kmeans_iters", "Lloyd iterations of the k-means++ baseline",
            [](E& c, std::string_view v) { c.kmeans_iters = parse_number<int>("kmeans_iters", v); },
            [](const E& c) { return std::to_string(c.kmeans_iters); });
        {
            auto [s, g] = str(&E::out);
            add("out", "output directory", s, g);
        }
        return k;
    }();
    return keys;
}

inline void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
    const std::string k = detail::trim(key);
    for (const auto& spec : config_keys())
        if (spec.name == k) {
            spec.set(cfg, value);
            return;
        }
    throw ConfigError("unknown config key '" + k + "'");
}

/// Apply `key = value` lines on top of `cfg`.
inline void apply_config_text(ExperimentConfig& cfg, std::string_view text) {
    std::size_t line_no = 0;
    for (const auto& raw : detail::split(text, '\n')) {
        ++line_no;
        std::string line = raw;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        set_config_value(cfg, line.substr(0, eq), line.substr(eq + 1));
    }
}

inline ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig cfg;
    apply_config_text(cfg, text);
    return cfg;
}

inline void apply_config_file(ExperimentConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(cfg, ss.str());
}

/// Every key with its current value and description, in config-file syntax.
inline std::string dump_config(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& k : config_keys()) out += "# " + k.doc + "\n" + k.name + " = " + k.get(cfg) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Data preparation

inline MixtureSpec parse_mixture(const std::string& components, const std::string& proportions, int record_dim) {
    MixtureSpec spec;
    spec.record_dim = record_dim;
    if (detail::trim(components).empty()) throw ConfigError("components: empty mixture");
    for (const auto& item : detail::split(components, ',')) {
        const auto f = detail::split(item, ':');
        if (f.size() != 3) throw ConfigError("components: expected u:LO:HI or g:CENTER:SIGMA, got '" + item + "'");
        const double a = detail::parse_number<double>("components", f[1]);
        const double b = detail::parse_number<double>("components", f[2]);
        if (f[0] == "u")
            spec.components.push_back(MixtureComponent::uniform(a, b, record_dim));
        else if (f[0] == "g")
            spec.components.push_back(MixtureComponent::gaussian(a, b, record_dim));
        else
            throw ConfigError("components: unknown kind '" + f[0] + "'");
    }
    if (!detail::trim(proportions).empty())
        for (const auto& p : detail::split(proportions, ','))
            spec.proportions.push_back(detail::parse_number<double>("proportions", p));
    spec.validate();
    return spec;
}

inline std::vector<std::vector<int>> parse_allow(const std::string& text) {
    std::vector<std::vector<int>> out;
    for (const auto& site : detail::split(text, ';')) {
        std::vector<int> ids;
        for (const auto& id : detail::split(site, ','))
            if (!id.empty()) ids.push_back(detail::parse_number<int>("allow", id));
        out.push_back(std::move(ids));
    }
    return out;
}

struct ExperimentData {
    std::vector<LabeledDataset> sites;
    LabeledDataset holdout;
    int record_dim = 1;
};

inline bool is_mixture_source(const ExperimentConfig& cfg) { return cfg.data == "mixture"; }

inline MixtureSpec mixture_of_config(const ExperimentConfig& cfg) {
    return parse_mixture(cfg.components, cfg.proportions, cfg.record_dim > 0 ? cfg.record_dim : 1);
}

/// Training/holdout records for `cfg`, plus the width actually used.
inline std::pair<LabeledDataset, LabeledDataset> load_records(const ExperimentConfig& cfg) {
    if (is_mixture_source(cfg)) {
        const auto spec = mixture_of_config(cfg);
        if (cfg.holdout < 2) throw ConfigError("holdout: need at least 2 records");
        Rng train_rng = site_rng(cfg.train.seed, kStreamTrainData);
        Rng hold_rng = site_rng(cfg.train.seed, kStreamHoldout);
        return {generate_mixture(spec, cfg.samples, train_rng), generate_mixture(spec, cfg.holdout, hold_rng)};
    }
    const auto bytes = detail::read_file(cfg.data);
    std::uint32_t dim = cfg.record_dim > 0 ? static_cast<std::uint32_t>(cfg.record_dim) : 2500u;
    if (cfg.record_dim <= 0 && has_fsgd_magic(bytes)) dim = decode_fsgd(bytes).record_dim;
    const auto all = ingest_payloads(bytes, dim);
    if (!(cfg.holdout_fraction > 0.0 && cfg.holdout_fraction < 1.0))
        throw ConfigError("holdout_fraction must be in (0,1)");
    std::vector<std::size_t> order(all.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = site_rng(cfg.train.seed, kStreamHoldout);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_hold = static_cast<std::size_t>(std::ceil(cfg.holdout_fraction * static_cast<double>(all.size())));
    if (n_hold < 2 || n_hold >= all.size()) throw ConfigError("dataset too small to hold out records");
    std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
    std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
    std::sort(hold.begin(), hold.end());
    std::sort(train.begin(), train.end());
    return {subset(all, train), subset(all, hold)};
}

inline PartitionPlan partition_plan(const ExperimentConfig& cfg, const LabeledDataset& train) {
    const int sites = cfg.train.site_count;
    if (cfg.partition == "iid") return PartitionPlan::iid(sites);
    if (cfg.partition == "by-component") {
        auto plan = PartitionPlan::by_component(parse_allow(cfg.allow));
        if (plan.site_count != sites) throw ConfigError("allow: one allow-list per site required");
        return plan;
    }
    if (cfg.partition == "leave-one-out") {
        if (!train.labels) throw ConfigError("partition: leave-one-out needs labeled records");
        const int k = *std::max_element(train.labels->begin(), train.labels->end()) + 1;
        return PartitionPlan::leave_one_out(sites, k);
    }
    throw ConfigError("partition: expected iid, leave-one-out or by-component, got '" + cfg.partition + "'");
}

/// Resolve the dataset, split it across sites and fix the record width in
/// `cfg.train.arch`.
inline ExperimentData prepare_data(ExperimentConfig& cfg) {
    auto [train, hold] = load_records(cfg);
    ExperimentData d;
    d.record_dim = train.record_dim();
    Rng rng = site_rng(cfg.train.seed, kStreamPartition);
    d.sites = partition(train, partition_plan(cfg, train), rng);
    d.holdout = std::move(hold);
    cfg.train.arch.record_dim = d.record_dim;
    return d;
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr const char* kMetricsHeader =
    "round,scope,loss_C,loss_D,loss_G,nmi,acc,ri,jsd_real_vs_model,kl,wasserstein,params_uploaded";

struct MetricsRow {
    int round = 0;
    std::string scope;  // "global" or "site<d>"
    std::optional<double> loss_c, loss_d, loss_g, nmi, acc, ri, js, kl, wasserstein;
    std::optional<std::size_t> params_uploaded;

    std::string to_csv() const {
        auto num = [](const std::optional<double>& v) {
            return v && std::isfinite(*v) ? detail::format_number(*v) : std::string();
        };
        std::string s = std::to_string(round) + "," + scope;
        for (const auto* v : {&loss_c, &loss_d, &loss_g, &nmi, &acc, &ri, &js, &kl, &wasserstein}) s += "," + num(*v);
        s += "," + (params_uploaded ? std::to_string(*params_uploaded) : std::string());
        return s;
    }

    static MetricsRow parse(std::string_view line) {
        const auto f = detail::split(line, ',');
        if (f.size() != 12) throw ParseError("metrics row: expected 12 fields", 0);
        MetricsRow r;
        r.round = detail::parse_number<int>("round", f[0]);
        r.scope = f[1];
        std::optional<double>* cols[] = {&r.loss_c, &r.loss_d, &r.loss_g, &r.nmi, &r.acc, &r.ri, &r.js, &r.kl, &r.wasserstein};
        for (std::size_t i = 0; i < 9; ++i)
            if (!f[i + 2].empty()) *cols[i] = detail::parse_number<double>("metric", f[i + 2]);
        if (!f[11].empty()) r.params_uploaded = detail::parse_number<std::size_t>("params_uploaded", f[11]);
        return r;
    }
};

inline std::vector<MetricsRow> metrics_rows(const RoundReport& rep) {
    std::vector<MetricsRow> rows;
    auto finite = [](double v) { return std::isfinite(v) ? std::optional<double>(v) : std::nullopt; };
    double c = 0.0, d = 0.0, g = 0.0;
    for (const auto& s : rep.sites) {
        MetricsRow r;
        r.round = rep.round;
        r.scope = "site" + std::to_string(s.site_id);
        r.loss_c = finite(s.loss_c);
        r.loss_d = finite(s.loss_d);
        r.loss_g = finite(s.loss_g);
        rows.push_back(r);
        c += s.loss_c;
        d += s.loss_d;
        g += s.loss_g;
    }
    MetricsRow global;
    global.round = rep.round;
    global.scope = "global";
    if (!rep.sites.empty()) {
        const double n = static_cast<double>(rep.sites.size());
        global.loss_c = finite(c / n);
        global.loss_d = finite(d / n);
        global.loss_g = finite(g / n);
    }
    if (rep.global) {
        global.nmi = rep.global->nmi;
        global.acc = rep.global->acc;
        global.ri = rep.global->ri;
        global.js = rep.global->js;
        global.kl = rep.global->kl;
        global.wasserstein = rep.global->wasserstein;
    }
    global.params_uploaded = rep.params_uploaded;
    rows.push_back(global);
    return rows;
}

inline std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader) throw ParseError("metrics csv: unexpected header", 0);
    std::vector<MetricsRow> rows;
    while (std::getline(in, line))
        if (!line.empty()) rows.push_back(MetricsRow::parse(line));
    return rows;
}

// ---------------------------------------------------------------------------
// Evaluation reports

struct EvaluationReport {
    std::size_t records = 0;
    std::optional<double> nmi, acc, ri;
    double js = 0.0, kl = 0.0, wasserstein = 0.0;
    std::vector<double> shares;
    DiscreteDist real_hist, model_hist;
    std::vector<std::optional<DiscreteDist>> generator_hists;  // empty when a generator drew no samples

    double share_entropy() const { return entropy(shares); }
};

/// Pseudo-label `data` with the model and compare packet-value histograms of
/// `data` and model samples. `self_check` substitutes the real records for
/// the model samples.
inline EvaluationReport evaluate_report(const FederatedModel& model, const LabeledDataset& data, const ExperimentConfig& cfg,
                                        bool self_check, Rng& rng) {
    if (data.record_dim() != model.head.record_dim()) throw ShapeError("evaluate: dataset width differs from model");
    if (data.size() == 0) throw ShapeError("evaluate: empty dataset");
    EvaluationReport r;
    r.records = data.size();
    const auto labels = pseudo_label(model.head, data.records);
    const int m_count = model.head.generator_count();
    r.shares = label_shares(labels, m_count);
    if (data.labels && data.size() >= 2) {
        r.nmi = nmi(*data.labels, labels);
        r.acc = acc(*data.labels, labels);
        r.ri = rand_index(*data.labels, labels);
    }
    const auto real_values = packet_values(data.records);
    r.real_hist = histogram(real_values, cfg.bins, cfg.range_lo, cfg.range_hi);

    std::vector<std::vector<double>> per_gen(static_cast<std::size_t>(m_count));
    std::vector<double> model_values;
    const auto banks = model.sampling_banks();
    const int per_bank = std::max(1, cfg.eval_samples / static_cast<int>(banks.size()));
    for (const auto* bank : banks) {
        const auto s = sample_bank(*bank, per_bank, rng);
        const auto v = packet_values(s.samples);
        for (std::size_t i = 0; i < v.size(); ++i) per_gen[static_cast<std::size_t>(s.generator_ids[i])].push_back(v[i]);
        model_values.insert(model_values.end(), v.begin(), v.end());
    }
    r.model_hist = self_check ? r.real_hist : histogram(model_values, cfg.bins, cfg.range_lo, cfg.range_hi);
    for (const auto& v : per_gen)
        r.generator_hists.push_back(v.empty() ? std::nullopt
                                              : std::optional(histogram(v, cfg.bins, cfg.range_lo, cfg.range_hi)));
    r.js = js_divergence(r.real_hist, r.model_hist);
    r.kl = kl_divergence(r.real_hist, r.model_hist);
    r.wasserstein = wasserstein1(r.real_hist, r.model_hist);
    return r;
}

inline void write_histogram(const std::filesystem::path& path, const DiscreteDist& h) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + path.string());
    for (std::size_t i = 0; i < h.probs.size(); ++i)
        out << detail::format_number(h.bin_center(i)) << '\t' << detail::format_number(h.probs[i]) << '\n';
}

/// evaluation.tsv plus hist_real.tsv, hist_model.tsv and hist_gen<m>.tsv.
inline void write_report(const std::filesystem::path& dir, const EvaluationReport& r) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "evaluation.tsv", std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + (dir / "evaluation.tsv").string());
    out << "records\t" << r.records << '\n';
    auto opt = [&](const char* k, const std::optional<double>& v) {
        out << k << '\t' << (v ? detail::format_number(*v) : std::string()) << '\n';
    };
    opt("ri", r.ri);
    opt("nmi", r.nmi);
    opt("acc", r.acc);
    out << "jsd_real_vs_model\t" << detail::format_number(r.js) << '\n';
    out << "kl\t" << detail::format_number(r.kl) << '\n';
    out << "wasserstein\t" << detail::format_number(r.wasserstein) << '\n';
    for (std::size_t m = 0; m < r.shares.size(); ++m)
        out << "share_" << m << '\t' << detail::format_number(r.shares[m]) << '\n';
    write_histogram(dir / "hist_real.tsv", r.real_hist);
    write_histogram(dir / "hist_model.tsv", r.model_hist);
    for (std::size_t m = 0; m < r.generator_hists.size(); ++m)
        if (r.generator_hists[m]) write_histogram(dir / ("hist_gen" + std::to_string(m) + ".tsv"), *r.generator_hists[m]);
}

inline void print_report(std::ostream& os, const EvaluationReport& r) {
    os << "records " << r.records << '\n';
    if (r.ri) os << "ri " << *r.ri << "\nnmi " << *r.nmi << "\nacc " << *r.acc << '\n';
    os << "jsd_real_vs_model " << r.js << "\nkl " << r.kl << "\nwasserstein " << r.wasserstein << '\n';
    for (std::size_t m = 0; m < r.shares.size(); ++m) os << "share_" << m << ' ' << r.shares[m] << '\n';
}

// ---------------------------------------------------------------------------
// Commands

/// Map library exceptions onto exit codes.
inline int run_guarded(std::ostream& err, int evaluation_code, const std::function<int()>& body) {
    try {
        return body();
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const ShapeError& e) {
        err << "error: " << e.what() << '\n';
        return evaluation_code;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ParseError& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return evaluation_code;
    }
}

inline EvalOptions eval_options(const ExperimentConfig& cfg, const LabeledDataset& holdout) {
    EvalOptions o;
    o.holdout = &holdout;
    o.model_samples = cfg.eval_samples;
    o.bins = cfg.bins;
    o.lo = cfg.range_lo;
    o.hi = cfg.range_hi;
    return o;
}

/// Write a labeled mixture sample as FSGD to <out>/dataset.fsgd.
inline int cmd_synth_data(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
    return run_guarded(err, kExitConfig, [&] {
        const auto spec = mixture_of_config(cfg);
        Rng rng = site_rng(cfg.train.seed, kStreamTrainData);
        const auto ds = generate_mixture(spec, cfg.samples, rng);
        std::filesystem::create_directories(cfg.out);
        const auto path = std::filesystem::path(cfg.out) / "dataset.fsgd";
        write_fsgd(path, to_payloads(ds));
        std::vector<std::size_t> counts(spec.size(), 0);
        for (int l : *ds.labels) ++counts[static_cast<std::size_t>(l)];
        out << "wrote " << path.string() << '\n';
        out << "records " << ds.size() << "\ncomponents " << spec.size() << "\nrecord_dim " << spec.record_dim << '\n';
        for (std::size_t m = 0; m < counts.size(); ++m)
            out << "proportion_" << m << ' ' << static_cast<double>(counts[m]) / static_cast<double>(ds.size()) << '\n';
        return kExitOk;
    });
}

/// Federated training: <out>/metrics.csv (rows appended as rounds finish),
/// model.bin, evaluation.tsv and histogram dumps for the final model.
inline int cmd_train(const ExperimentConfig& config, std::ostream& out, std::ostream& err) {
    return run_guarded(err, kExitEvaluation, [&] {
        ExperimentConfig cfg = config;
        auto data = prepare_data(cfg);
        cfg.train.validate();
        const std::filesystem::path dir = cfg.out;
        std::filesystem::create_directories(dir);
        std::ofstream csv(dir / "metrics.csv", std::ios::trunc);
        if (!csv) throw ConfigError("cannot write " + (dir / "metrics.csv").string());
        csv << kMetricsHeader << '\n' << std::flush;

        const auto holdout = data.holdout;
        const auto eval = eval_options(cfg, holdout);
        int last_good = 0;
        std::optional<FederatedModel> last_model;
        if (cfg.train.rounds == 0) {
            const auto sites = init_sites(cfg.train, std::move(data.sites));
            last_model = snapshot_model(sites, cfg.train.scheme);
        } else {
            try {
                auto result = run_training(cfg.train, std::move(data.sites), eval,
                                           [&](const RoundReport& rep, const std::vector<LocalSite>& sites) {
                                               for (const auto& row : metrics_rows(rep)) csv << row.to_csv() << '\n';
                                               csv << std::flush;
                                               last_good = rep.round;
                                               last_model = snapshot_model(sites, cfg.train.scheme);
                                               out << "round " << rep.round;
                                               if (rep.global && rep.global->nmi) out << " nmi " << *rep.global->nmi;
                                               if (rep.global) out << " js " << rep.global->js;
                                               out << '\n';
                                           });
                last_model = std::move(result.model);
            } catch (const DivergenceError& e) {
                if (last_model) save_model(dir / "model.bin", *last_model);
                err << "error: training diverged in round " << last_good + 1 << ": " << e.what()
                    << "; last good round " << last_good
                    << (last_model ? " (its model was saved)" : "") << '\n';
                return kExitDivergence;
            }
        }
        save_model(dir / "model.bin", *last_model);
        Rng rng = site_rng(cfg.train.seed, kStreamReport);
        const auto report = evaluate_report(*last_model, holdout, cfg, false, rng);
        write_report(dir, report);
        print_report(out, report);
        return kExitOk;
    });
}

/// Evaluate a checkpoint on `data_path` (FSGD or raw payloads) or, if empty,
/// on the holdout records the config describes.
inline int cmd_evaluate(const ExperimentConfig& config, const std::filesystem::path& model_path,
                        const std::filesystem::path& data_path, bool self_check, std::ostream& out, std::ostream& err) {
    return run_guarded(err, kExitEvaluation, [&] {
        ExperimentConfig cfg = config;
        FederatedModel model;
        try {
            model = load_model(model_path);
        } catch (const ParseError& e) {
            err << "error: cannot load model: " << e.what() << '\n';
            return kExitEvaluation;
        }
        const int dim = model.head.record_dim();
        LabeledDataset data;
        if (!data_path.empty()) {
            const auto bytes = detail::read_file(data_path);
            if (has_fsgd_magic(bytes)) {
                const auto stored = decode_fsgd(bytes);
                if (static_cast<int>(stored.record_dim) != dim) {
                    err << "error: dataset record_dim " << stored.record_dim << " differs from model record_dim " << dim << '\n';
                    return kExitEvaluation;
                }
            }
            data = ingest_payloads(bytes, static_cast<std::uint32_t>(dim));
        } else {
            if (cfg.record_dim > 0 && cfg.record_dim != dim) {
                err << "error: config record_dim " << cfg.record_dim << " differs from model record_dim " << dim << '\n';
                return kExitEvaluation;
            }
            if (is_mixture_source(cfg) || cfg.record_dim == 0) cfg.record_dim = dim;
            data = load_records(cfg).second;
            if (data.record_dim() != dim) {
                err << "error: dataset record_dim " << data.record_dim() << " differs from model record_dim " << dim << '\n';
                return kExitEvaluation;
            }
        }
        Rng rng = site_rng(cfg.train.seed, kStreamReport);
        const auto report = evaluate_report(model, data, cfg, self_check, rng);
        write_report(cfg.out, report);
        print_report(out, report);
        return kExitOk;
    });
}

inline constexpr const char* kComparisonHeader = "method,seed,ri,nmi,acc,jsd_real_vs_model,share_entropy";

struct ComparisonRow {
    std::string method;
    std::uint64_t seed = 0;
    double ri = 0.0, nmi = 0.0, acc = 0.0;
    std::optional<double> js;
    double share_entropy = 0.0;

    std::string to_csv() const {
        return method + "," + std::to_string(seed) + "," + detail::format_number(ri) + "," + detail::format_number(nmi) + "," +
               detail::format_number(acc) + "," + (js ? detail::format_number(*js) : std::string()) + "," +
               detail::format_number(share_entropy);
    }
};

/// FS-GAN, the lambda = 0 ablation and k-means++ on identical data for each
/// seed in [seed, seed + compare_seeds).
inline std::vector<ComparisonRow> run_comparison(const ExperimentConfig& config, std::ostream& log) {
    std::vector<ComparisonRow> rows;
    if (config.compare_seeds < 1) throw ConfigError("compare_seeds must be >= 1");
    for (int k = 0; k < config.compare_seeds; ++k) {
        ExperimentConfig cfg = config;
        cfg.train.seed = config.train.seed + static_cast<std::uint64_t>(k);
        auto data = prepare_data(cfg);
        if (!data.holdout.labels) throw ConfigError("compare needs labeled records");
        const auto& truth = *data.holdout.labels;

        auto gan_row = [&](const char* method, TrainConfig tc) {
            const auto eval = eval_options(cfg, data.holdout);
            const auto result = run_training(tc, data.sites, eval);
            Rng rng = site_rng(tc.seed, kStreamReport);
            const auto rep = evaluate_report(result.model, data.holdout, cfg, false, rng);
            ComparisonRow r{method, cfg.train.seed, *rep.ri, *rep.nmi, *rep.acc, rep.js, rep.share_entropy()};
            log << method << " seed " << r.seed << " nmi " << r.nmi << " js " << rep.js << '\n';
            return r;
        };
        rows.push_back(gan_row("fs-gan", cfg.train));
        TrainConfig ablated = cfg.train;
        ablated.lambda = 0.0;
        ablated.ablation = true;
        rows.push_back(gan_row("f-gan", ablated));

        Rng krng = site_rng(cfg.train.seed, kStreamBaseline);
        const auto clusters = kmeans_plusplus(data.holdout.records, cfg.train.generator_count, krng, cfg.kmeans_iters);
        ComparisonRow km{"kmeans++", cfg.train.seed, rand_index(truth, clusters), nmi(truth, clusters), acc(truth, clusters),
                         std::nullopt, entropy(label_shares(clusters, cfg.train.generator_count))};
        log << "kmeans++ seed " << km.seed << " nmi " << km.nmi << '\n';
        rows.push_back(km);
    }
    return rows;
}

inline int cmd_compare(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
    return run_guarded(err, kExitEvaluation, [&] {
        const auto rows = run_comparison(cfg, out);
        std::filesystem::create_directories(cfg.out);
        const auto path = std::filesystem::path(cfg.out) / "comparison.csv";
        std::ofstream csv(path, std::ios::trunc);
        if (!csv) throw ConfigError("cannot write " + path.string());
        csv << kComparisonHeader << '\n';
        for (const auto& r : rows) csv << r.to_csv() << '\n';
        out << "wrote " << path.string() << '\n';
        return kExitOk;
    });
}

}  // namespace fsgan
