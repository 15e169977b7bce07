#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "loralab/checkpoint.hpp"
#include "loralab/config.hpp"
#include "loralab/harness.hpp"
#include "loralab/io.hpp"

namespace loralab {

namespace cli_detail {

struct Options {
    std::string config_path;
    std::string out_dir = ".";
    std::string checkpoint_path;
    std::string in_path;
    std::optional<std::uint64_t> seed;
    bool quiet = false;
};

inline ExperimentConfig load(const Options& opt) {
    ExperimentConfig cfg = load_config(opt.config_path);
    if (opt.seed) {
        cfg.seed = *opt.seed;
        cfg.train.seed = cfg.seed;
    }
    return cfg;
}

inline std::filesystem::path out_file(const Options& opt, const char* name) {
    return std::filesystem::path(opt.out_dir) / name;
}

inline void info(const Options& opt, const std::string& line) {
    if (!opt.quiet) std::printf("%s\n", line.c_str());
}

inline json manifest(const char* command, const ExperimentConfig& cfg) {
    return json{{"command", command}, {"config", to_json(cfg)}};
}

// Per-epoch console line; throttled so long runs stay readable. Timing is
// console-only (output files carry no wall-clock data).
inline auto epoch_printer(const Options& opt, int total_epochs) {
    const int every = std::max(1, total_epochs / 10);
    return [&opt, every, total_epochs](const EpochRow& row) {
        if (opt.quiet) return;
        if (row.epoch % every != 0 && row.epoch + 1 != total_epochs) return;
        std::printf(
            "epoch %4d  train_loss %.4f  test_loss %.4f  train_acc %.3f  test_acc %.3f  "
            "ece %.3f  (%.0f ms)\n",
            row.epoch, row.train_loss, row.test_loss, row.train_acc, row.test_acc, row.ece,
            row.wall_ms);
    };
}

inline int cmd_pretrain(const Options& opt) {
    ExperimentConfig cfg = load(opt);
    info(opt, "pre-training on " + std::to_string(cfg.data.pretrain_n) + " samples");
    PretrainResult result = run_pretrain(cfg, epoch_printer(opt, cfg.pretrain.epochs));
    save_checkpoint(out_file(opt, "pretrained.json"), result.model, cfg.model);
    write_text_file(out_file(opt, "pretrain_run.csv"), run_record_csv(result.record));
    write_text_file(out_file(opt, "pretrain_manifest.json"),
                    manifest("pretrain", cfg).dump(2) + "\n");
    if (!result.record.rows.empty())
        info(opt, "final train accuracy " + fmt(result.record.rows.back().train_acc));
    info(opt, "wrote " + out_file(opt, "pretrained.json").string());
    return 0;
}

inline int cmd_finetune(const Options& opt) {
    ExperimentConfig cfg = load(opt);
    Checkpoint ckpt = load_checkpoint(opt.checkpoint_path);
    info(opt, "fine-tuning (" + std::string(to_string(cfg.train.mode)) + " mode, p=" +
                  fmt(cfg.train.dropout_rate) + ", N=" + std::to_string(cfg.train.instances) +
                  ") on " + std::to_string(cfg.data.train_n) + " samples");
    FinetuneResult result = run_finetune(cfg, ckpt.model, epoch_printer(opt, cfg.train.epochs));
    save_checkpoint(out_file(opt, "checkpoint.json"), result.model, cfg.model);
    write_text_file(out_file(opt, "run.csv"), run_record_csv(result.record));
    write_text_file(out_file(opt, "run_manifest.json"), manifest("finetune", cfg).dump(2) + "\n");
    if (!result.record.rows.empty()) {
        const EpochRow& last = result.record.rows.back();
        info(opt, "final: train_loss " + fmt(last.train_loss) + ", test_loss " +
                      fmt(last.test_loss) + ", test_acc " + fmt(last.test_acc));
    }
    info(opt, "wrote " + out_file(opt, "run.csv").string());
    return 0;
}

inline int cmd_eval(const Options& opt) {
    ExperimentConfig cfg = load(opt);
    Checkpoint ckpt = load_checkpoint(opt.checkpoint_path);
    check_architecture(ckpt.model, cfg.model);
    EvalResult result = run_eval(ckpt.model, cfg);
    write_text_file(out_file(opt, "eval.json"), eval_report_json(result).dump(2) + "\n");
    info(opt, "accuracy " + fmt(result.accuracy) + ", ece " + fmt(result.calibration.ece) +
                  " over " + std::to_string(result.n) + " samples");
    return 0;
}

inline int cmd_sweep(const Options& opt) {
    ExperimentConfig cfg = load(opt);
    info(opt, "sweeping " + std::to_string(cfg.sweep.p_grid.size()) + " dropout rates x " +
                  std::to_string(cfg.sweep.seeds.size()) + " seeds");
    GapSweepRecord record = run_gap_sweep(cfg, [&](const SweepRow& row) {
        if (opt.quiet) return;
        std::printf("p=%.2f seed=%llu gap=%s%s\n", row.p,
                    static_cast<unsigned long long>(row.seed), fmt(row.gap).c_str(),
                    row.diverged ? " (diverged)" : "");
    });
    write_text_file(out_file(opt, "sweep.csv"), sweep_csv(record));
    write_text_file(out_file(opt, "sweep.json"), sweep_record_json(record).dump(2) + "\n");
    write_text_file(out_file(opt, "sweep.svg"), sweep_chart_svg(record.rows));
    info(opt, "wrote " + out_file(opt, "sweep.csv").string());
    return 0;
}

inline int cmd_jensen(const Options& opt) {
    ExperimentConfig cfg = load(opt);
    std::vector<JensenReport> reports = run_jensen(cfg);
    write_text_file(out_file(opt, "jensen.csv"), jensen_csv(reports));
    write_text_file(out_file(opt, "jensen.json"), jensen_reports_json(reports).dump(2) + "\n");
    for (const JensenReport& r : reports)
        info(opt, std::string("domain ") + to_string(r.domain) + ": " +
                      std::to_string(r.violations) + " violations over " +
                      std::to_string(r.rows.size()) + " trials");
    return 0;
}

inline int cmd_stability(const Options& opt) {
    ExperimentConfig cfg = load(opt);
    std::vector<StabilityReport> reports = run_stability(cfg);
    write_text_file(out_file(opt, "stability.csv"), stability_csv(reports));
    write_text_file(out_file(opt, "stability.json"),
                    stability_reports_json(reports).dump(2) + "\n");
    for (const StabilityReport& r : reports)
        info(opt, "lambda " + fmt(r.lambda) + ": max perturbation " + fmt(r.max_observed) +
                      " vs bound " + fmt(r.beta_bound) +
                      (r.bound_satisfied ? " (satisfied)" : " (VIOLATED)"));
    return 0;
}

inline int cmd_mcnorm(const Options& opt) {
    ExperimentConfig cfg = load(opt);
    std::vector<McNormReport> reports = run_mcnorm(cfg);
    write_text_file(out_file(opt, "mcnorm.csv"), mcnorm_csv(reports));
    write_text_file(out_file(opt, "mcnorm.json"),
                    mcnorm_reports_json(reports, cfg.mcnorm.dim).dump(2) + "\n");
    for (const McNormReport& r : reports)
        info(opt, "p " + fmt(r.p) + ": mc " + fmt(r.mc_estimate) + " vs closed form " +
                      fmt(r.closed_form) + " (rel err " + fmt(r.rel_error) + ")");
    return 0;
}

inline int cmd_plot(const Options& opt) {
    if (!std::filesystem::exists(opt.in_path))
        throw config_error("input CSV not found: " + opt.in_path);
    std::vector<SweepRow> rows = parse_sweep_csv(read_text_file(opt.in_path));
    write_text_file(out_file(opt, "sweep.svg"), sweep_chart_svg(rows));
    info(opt, "wrote " + out_file(opt, "sweep.svg").string());
    return 0;
}

}  // namespace cli_detail

// Entry point behind the binary: args in natural order, no program name.
// Exit codes: 0 success, 1 usage/config error, 2 numerical failure.
inline int run_cli(std::vector<std::string> args) {
    cli_detail::Options opt;
    CLI::App app{"desk-scale low-rank adapter dropout laboratory", "loralab"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_option("--config", opt.config_path, "experiment configuration JSON");
    app.add_option("--seed", opt.seed, "master seed override");
    app.add_option("--out", opt.out_dir, "output directory (default .)");
    app.add_flag("--quiet", opt.quiet, "suppress console output");

    CLI::App* pretrain = app.add_subcommand("pretrain", "train the plain base model");
    CLI::App* finetune = app.add_subcommand("finetune", "adapter fine-tuning on the shifted task");
    finetune->add_option("--checkpoint", opt.checkpoint_path, "pre-trained checkpoint")
        ->required();
    CLI::App* eval = app.add_subcommand("eval", "test-time ensemble evaluation");
    eval->add_option("--checkpoint", opt.checkpoint_path, "checkpoint to evaluate")->required();
    CLI::App* sweep = app.add_subcommand("sweep", "generalization gap vs dropout rate");
    CLI::App* jensen = app.add_subcommand("jensen-check", "ensemble convexity inequality check");
    CLI::App* stability = app.add_subcommand("stability-probe", "leave-one-out stability bound");
    CLI::App* mcnorm = app.add_subcommand("mcnorm-check", "expected masked-norm identity check");
    CLI::App* plot = app.add_subcommand("plot", "re-render a sweep chart from CSV");
    plot->add_option("--in", opt.in_path, "sweep CSV to plot")->required();

    for (CLI::App* sub : {pretrain, finetune, eval, sweep, jensen, stability, mcnorm})
        sub->callback([&app]() {
            if (app.count("--config") == 0) throw CLI::RequiredError("--config");
        });

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        std::printf("%s", app.help().c_str());
        return 0;
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        std::fprintf(stderr, "run 'loralab --help' for usage\n");
        return 1;
    }

    try {
        if (pretrain->parsed()) return cli_detail::cmd_pretrain(opt);
        if (finetune->parsed()) return cli_detail::cmd_finetune(opt);
        if (eval->parsed()) return cli_detail::cmd_eval(opt);
        if (sweep->parsed()) return cli_detail::cmd_sweep(opt);
        if (jensen->parsed()) return cli_detail::cmd_jensen(opt);
        if (stability->parsed()) return cli_detail::cmd_stability(opt);
        if (mcnorm->parsed()) return cli_detail::cmd_mcnorm(opt);
        if (plot->parsed()) return cli_detail::cmd_plot(opt);
        std::fprintf(stderr, "error: no subcommand given\n");
        return 1;
    } catch (const numerical_error& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 2;
    } catch (const probe_error& e) {
        std::fprintf(stderr, "probe failure: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace loralab
