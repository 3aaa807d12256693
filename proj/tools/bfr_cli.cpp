// bfr: train, refine, sample and evaluate flow generators from a YAML config.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bfr/error.hpp"
#include "bfr/harness.hpp"

namespace {

using Command = bfr::harness::Paths (*)(const bfr::harness::ExperimentConfig&);

struct Options {
    std::string config;
    std::vector<std::string> sets;
    std::vector<unsigned long long> seeds;
    std::string output_dir;
    int threads = 0;
    std::string dataset;
};

void add_common(CLI::App* sub, Options& o) {
    sub->add_option("-c,--config", o.config, "experiment config (YAML)")->required();
    sub->add_option("--set", o.sets, "override a config key, e.g. --set refiner.steps=500");
    sub->add_option("--seed", o.seeds, "replace the seeds list");
    sub->add_option("--output-dir", o.output_dir, "output directory");
    sub->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--dataset", o.dataset, "dataset name");
}

int run(const Options& o, Command cmd) {
    std::vector<std::string> overrides = o.sets;
    if (!o.seeds.empty()) {
        std::string list = "[";
        for (std::size_t i = 0; i < o.seeds.size(); ++i) list += (i ? "," : "") + std::to_string(o.seeds[i]);
        overrides.push_back("seeds=" + list + "]");
    }
    if (!o.dataset.empty()) overrides.push_back("dataset.name=" + o.dataset);
    auto cfg = bfr::harness::load_config(o.config, overrides);
    bfr::harness::apply_environment(cfg);
    if (!o.output_dir.empty()) cfg.output_dir = o.output_dir;
    if (o.threads > 0) cfg.threads = cfg.refiner.train.threads = o.threads;
    for (const auto& f : cmd(cfg).files) std::cout << f.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bi-stage flow refinement toolkit"};
    app.require_subcommand(1);
    Options opts;
    const std::pair<const char*, Command> commands[] = {
        {"train-base", bfr::harness::cmd_train_base}, {"train-refiner", bfr::harness::cmd_train_refiner},
        {"sample", bfr::harness::cmd_sample},         {"refine", bfr::harness::cmd_refine},
        {"invert", bfr::harness::cmd_invert},         {"evaluate", bfr::harness::cmd_evaluate},
        {"ablate", bfr::harness::cmd_ablate},         {"transfer", bfr::harness::cmd_transfer},
        {"plot", bfr::harness::cmd_plot},
    };
    const char* descriptions[] = {
        "train the base generator", "train a refiner against the base generator",
        "dump base samples per seed", "dump refined samples per seed",
        "invert the reference set to latents", "write the metrics report",
        "run an ablation grid", "apply refiners to a degraded generator",
        "scatter plot of data, base and refined samples",
    };
    std::vector<std::pair<CLI::App*, Command>> subs;
    for (std::size_t i = 0; i < std::size(commands); ++i) {
        auto* sub = app.add_subcommand(commands[i].first, descriptions[i]);
        add_common(sub, opts);
        subs.emplace_back(sub, commands[i].second);
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    try {
        for (const auto& [sub, cmd] : subs)
            if (sub->parsed()) return run(opts, cmd);
    } catch (const bfr::Error& e) {
        std::cerr << "bfr: " << e.what() << '\n';
        return bfr::harness::exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "bfr: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
