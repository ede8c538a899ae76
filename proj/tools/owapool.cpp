// owapool: experiment CLI for ordered-weighted-average pooling.
//
//   owapool <cnn|bow|bench|robust> --config <file> [--seed N] [--out DIR]
//
// Exit codes: 0 success, 2 config error, 3 training abort.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "owapool/errors.hpp"
#include "owapool/harness.hpp"

namespace {

using owapool::harness::ExperimentConfig;

int run(ExperimentConfig::Task task, const std::string& config_path, std::int64_t seed_override,
        const std::string& out_override) {
    ExperimentConfig cfg = owapool::harness::parse_config_file(config_path);
    if (cfg.echo.count("experiment.task") > 0 && cfg.task != task) {
        throw owapool::ConfigError("config task '" + cfg.echo.at("experiment.task") +
                                   "' does not match the CLI subcommand");
    }
    cfg.task = task;
    if (seed_override >= 0) {
        cfg.seed = static_cast<std::uint64_t>(seed_override);
        cfg.echo["experiment.seed"] = std::to_string(seed_override);
    }
    if (!out_override.empty()) {
        cfg.out_dir = out_override;
        cfg.echo["experiment.out"] = out_override;
    }

    const auto report = owapool::harness::run_experiment(cfg);

    std::printf("report written to %s/report.json\n", cfg.out_dir.c_str());
    for (const auto& v : report.variants) {
        std::printf("  %-10s train_acc=%.4f test_acc=%.4f final_J=%.6f\n", v.variant.c_str(),
                    v.final_train_acc, v.final_test_acc, v.final_cost);
    }
    for (const auto& b : report.bow) {
        std::printf("  K=%-4d %-6s train_acc=%.4f test_acc=%.4f J=%.6f outer=%d%s\n", b.dict_size,
                    b.variant.c_str(), b.train_acc, b.test_acc, b.final_cost, b.outer_iters,
                    b.converged ? " (converged)" : "");
    }
    for (const auto& b : report.bench) {
        std::printf("  %-4s %dx%dx%dx%d windows=%llu fwd=%.3fms fwd+bwd=%.3fms ratio_to_max=%.2fx\n",
                    b.variant.c_str(), b.shape[0], b.shape[1], b.shape[2], b.shape[3],
                    static_cast<unsigned long long>(b.window_ops), b.fwd_ms, b.fwd_bwd_ms,
                    b.fwd_ratio_to_max);
    }
    for (const auto& c : report.robustness) {
        std::printf("  %-10s rotation accuracies:", c.variant.c_str());
        for (std::size_t i = 0; i < c.angles.size(); ++i)
            std::printf(" %g:%.4f", c.angles[i], c.accuracy[i]);
        std::printf("\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ordered-weighted-average pooling experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::int64_t seed = -1;
    std::string out_dir;

    const auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "experiment config file")->required();
        sub->add_option("--seed", seed, "override experiment.seed");
        sub->add_option("--out", out_dir, "override experiment.out");
    };
    auto* cnn = app.add_subcommand("cnn", "train CNN pooling variants and compare");
    auto* bow = app.add_subcommand("bow", "bag-of-words pipeline with pooled features");
    auto* bench = app.add_subcommand("bench", "pooling wall-clock benchmark");
    auto* robust = app.add_subcommand("robust", "rotation-robustness evaluation");
    for (auto* sub : {cnn, bow, bench, robust}) add_common(sub);

    CLI11_PARSE(app, argc, argv);

    ExperimentConfig::Task task = ExperimentConfig::Task::Cnn;
    if (bow->parsed()) task = ExperimentConfig::Task::Bow;
    else if (bench->parsed()) task = ExperimentConfig::Task::Bench;
    else if (robust->parsed()) task = ExperimentConfig::Task::Robust;

    try {
        return run(task, config_path, seed, out_dir);
    } catch (const owapool::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const owapool::TrainingAbort& e) {
        std::fprintf(stderr, "training aborted: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
