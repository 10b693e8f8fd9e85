// fsgan: synthesize datasets, train, evaluate and compare.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fsgan/experiment.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> scheme;
    std::optional<double> lambda;
    std::optional<int> sites, generators, rounds, local_iters, batch, threads;
    std::optional<std::string> out;
    std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "key = value config file");
    cmd->add_option("--seed", o.seed, "global seed");
    cmd->add_option("--scheme", o.scheme, "coordination scheme")->check(CLI::IsMember({"c1", "c2"}));
    cmd->add_option("--lambda", o.lambda, "classifier weight");
    cmd->add_option("--sites", o.sites, "number of sites N");
    cmd->add_option("--generators", o.generators, "generators per site M");
    cmd->add_option("--rounds", o.rounds, "global rounds J");
    cmd->add_option("--local-iters", o.local_iters, "local iterations per round I");
    cmd->add_option("--batch", o.batch, "mini-batch size B");
    cmd->add_option("--threads", o.threads, "worker threads");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--set", o.sets, "extra key=value override (repeatable)");
}

fsgan::ExperimentConfig resolve(const Overrides& o) {
    fsgan::ExperimentConfig cfg;
    if (!o.config.empty()) fsgan::apply_config_file(cfg, o.config);
    auto put = [&](const char* key, const auto& v) {
        if (!v) return;
        if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, std::string>)
            fsgan::set_config_value(cfg, key, *v);
        else
            fsgan::set_config_value(cfg, key, std::to_string(*v));
    };
    put("seed", o.seed);
    put("scheme", o.scheme);
    if (o.lambda) cfg.train.lambda = *o.lambda;
    put("sites", o.sites);
    put("generators", o.generators);
    put("rounds", o.rounds);
    put("local_iters", o.local_iters);
    put("batch", o.batch);
    put("threads", o.threads);
    put("out", o.out);
    for (const auto& s : o.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw fsgan::ConfigError("--set expects key=value, got '" + s + "'");
        fsgan::set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated multi-generator GAN clustering"};
    app.require_subcommand(0, 1);
    bool list_keys = false;
    app.add_flag("--list-keys", list_keys, "print every config key with its default and exit");

    Overrides synth_o, train_o, eval_o, compare_o;
    auto* synth = app.add_subcommand("synth-data", "write a labeled mixture sample as FSGD");
    add_common(synth, synth_o);
    auto* train = app.add_subcommand("train", "federated training; writes metrics.csv and model.bin");
    add_common(train, train_o);
    auto* evaluate = app.add_subcommand("evaluate", "clustering and distribution metrics of a checkpoint");
    add_common(evaluate, eval_o);
    std::string model_path = "model.bin", data_path;
    bool self_check = false;
    evaluate->add_option("--model", model_path, "checkpoint to evaluate");
    evaluate->add_option("--data", data_path, "FSGD or raw payload file (default: holdout from the config)");
    evaluate->add_flag("--self-check", self_check, "compare the real distribution against itself");
    auto* compare = app.add_subcommand("compare", "FS-GAN vs lambda = 0 ablation vs k-means++");
    add_common(compare, compare_o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : fsgan::kExitConfig;
    }
    if (list_keys) {
        std::cout << fsgan::dump_config(fsgan::ExperimentConfig{});
        return fsgan::kExitOk;
    }
    if (app.get_subcommands().empty()) {
        std::cerr << app.help();
        return fsgan::kExitConfig;
    }

    fsgan::ExperimentConfig cfg;
    const Overrides& o = synth->parsed() ? synth_o : train->parsed() ? train_o : evaluate->parsed() ? eval_o : compare_o;
    try {
        cfg = resolve(o);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return fsgan::kExitConfig;
    }

    if (synth->parsed()) return fsgan::cmd_synth_data(cfg, std::cout, std::cerr);
    if (train->parsed()) return fsgan::cmd_train(cfg, std::cout, std::cerr);
    if (evaluate->parsed()) return fsgan::cmd_evaluate(cfg, model_path, data_path, self_check, std::cout, std::cerr);
    return fsgan::cmd_compare(cfg, std::cout, std::cerr);
}
