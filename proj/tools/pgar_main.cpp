// Experiment harness CLI: seeded runs, the five-variant ablation study,
// plot-data emission and config validation.
//
// Exit codes: 0 success, 1 validation/format error, 2 training fault.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pgar/pgar.hpp"

namespace fs = std::filesystem;

namespace {

// Precedence: --out flag, then PGAR_OUTPUT_DIR, then config output_dir.
fs::path resolve_output_dir(const std::string& flag_out, const std::string& config_out) {
    if (!flag_out.empty()) return flag_out;
    if (const char* env = std::getenv("PGAR_OUTPUT_DIR"); env && *env) return env;
    return config_out;
}

int cmd_run(const std::string& config_path, const std::string& out_flag, long seed_flag) {
    pgar::ExperimentConfig cfg = pgar::parse_config(config_path);
    const std::uint64_t seed =
        seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag) : cfg.seed;
    const fs::path out = resolve_output_dir(out_flag, cfg.output_dir);

    pgar::RunResult result = pgar::run_experiment(cfg, seed);
    pgar::write_run_outputs(result, out);
    if (result.faulted) {
        std::cerr << "training fault at step " << result.fault_step << ": "
                  << result.fault_reason << "\n";
        std::cerr << "partial trace written to " << (out / "trace.csv") << "\n";
        return 2;
    }
    std::cout << "run complete: " << result.total_steps << " steps, accuracy "
              << pgar::format_double(result.summary.accuracy) << ", ece "
              << pgar::format_double(result.summary.ece) << "\n";
    std::cout << "outputs in " << out << "\n";
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_flag, long n_seeds) {
    pgar::ExperimentConfig cfg = pgar::parse_config(config_path);
    std::vector<std::uint64_t> seeds = cfg.seeds;
    if (n_seeds > 0) {
        seeds.clear();
        for (long s = 1; s <= n_seeds; ++s) seeds.push_back(static_cast<std::uint64_t>(s));
    }
    const fs::path out = resolve_output_dir(out_flag, cfg.output_dir);

    std::vector<pgar::RunResult> runs;
    const pgar::AblationTable table = pgar::run_ablation(cfg, seeds, &runs);

    fs::create_directories(out);
    for (const auto& r : runs) {
        const fs::path run_dir =
            out / (std::string(pgar::ablation_name(r.ablation)) + "_seed" + std::to_string(r.seed));
        pgar::write_run_outputs(r, run_dir);
    }
    {
        std::ofstream csv(out / "ablation.csv", std::ios::binary);
        pgar::write_ablation_csv(csv, table);
    }
    {
        std::ofstream js(out / "ablation.json", std::ios::binary);
        js << pgar::ablation_to_json(table).dump(2) << '\n';
    }

    bool any_fault = false;
    for (const auto& row : table.rows) {
        std::cout << pgar::ablation_name(row.variant) << ": ";
        if (row.faulted) {
            std::cout << "FAULTED";
            any_fault = true;
        } else {
            std::cout << "loss_var " << pgar::format_double(row.loss_variance) << ", ece "
                      << pgar::format_double(row.ece);
            if (row.tau_rec) std::cout << ", tau_rec " << pgar::format_double(*row.tau_rec);
        }
        std::cout << "\n";
    }
    std::cout << "table in " << (out / "ablation.csv") << "\n";
    return any_fault ? 2 : 0;
}

int cmd_plot_data(const std::string& input, const std::string& kind_str,
                  const std::string& out_flag, long bins, long steps_per_epoch) {
    const pgar::PlotKind kind = pgar::plot_kind_from_string(kind_str);

    fs::path input_path(input);
    fs::path run_dir = fs::is_directory(input_path) ? input_path : input_path.parent_path();
    const fs::path trace_path =
        fs::is_directory(input_path) ? input_path / "trace.csv" : input_path;

    std::vector<pgar::TraceRecord> trace;
    std::vector<pgar::EvalSample> eval_samples;
    pgar::PlotOptions opts;
    if (bins > 0) opts.bins = static_cast<std::size_t>(bins);

    if (kind == pgar::PlotKind::CalibrationCurve) {
        eval_samples = pgar::read_eval_file((run_dir / "eval.csv").string());
    } else {
        trace = pgar::read_trace_file(trace_path.string());
    }

    if (kind == pgar::PlotKind::MaturityCurve) {
        if (steps_per_epoch > 0) {
            opts.steps_per_epoch = static_cast<std::size_t>(steps_per_epoch);
        } else {
            const fs::path metrics_path = run_dir / "metrics.json";
            std::ifstream in(metrics_path, std::ios::binary);
            if (!in)
                throw pgar::DomainError(
                    "maturity_curve needs --steps-per-epoch or a metrics.json next to the trace");
            const auto doc = pgar::json::parse(in, nullptr, false);
            if (doc.is_discarded() || !doc.contains("run") ||
                !doc["run"].contains("steps_per_epoch"))
                throw pgar::FormatError("cannot read steps_per_epoch from " +
                                        metrics_path.string());
            opts.steps_per_epoch = doc["run"]["steps_per_epoch"].get<std::size_t>();
        }
    }

    const fs::path out_path =
        out_flag.empty() ? run_dir / (kind_str + ".csv") : fs::path(out_flag);
    if (out_flag == "-") {
        pgar::emit_plot_data(kind, trace, eval_samples, opts, std::cout);
    } else {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw pgar::FormatError("cannot write " + out_path.string());
        pgar::emit_plot_data(kind, trace, eval_samples, opts, out);
        std::cout << "wrote " << out_path << "\n";
    }
    return 0;
}

int cmd_validate(const std::string& config_path) {
    pgar::parse_config(config_path);
    std::cout << "config ok: " << config_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"reliability-controlled optimization lab"};
    app.require_subcommand(1);

    std::string config_path, out_flag, input, kind_str;
    long seed_flag = -1, n_seeds = 0, bins = 0, steps_per_epoch = 0;

    auto* run = app.add_subcommand("run", "execute one seeded training run");
    run->add_option("config", config_path, "experiment config (JSON)")->required();
    run->add_option("--out", out_flag, "output directory override");
    run->add_option("--seed", seed_flag, "seed override");

    auto* ablate = app.add_subcommand("ablate", "run the five-variant ablation study");
    ablate->add_option("config", config_path, "experiment config (JSON)")->required();
    ablate->add_option("--seeds", n_seeds, "use seeds 1..K instead of the config list");
    ablate->add_option("--out", out_flag, "output directory override");

    auto* plot = app.add_subcommand("plot-data", "emit figure data from a run");
    plot->add_option("trace", input, "trace.csv or run directory")->required();
    plot->add_option("--kind", kind_str,
                     "calibration_curve | reliability_trajectory | maturity_curve | "
                     "agility_safety")
        ->required();
    plot->add_option("--out", out_flag, "output file ('-' for stdout)");
    plot->add_option("--bins", bins, "calibration bins (default 15)");
    plot->add_option("--steps-per-epoch", steps_per_epoch, "steps per epoch for maturity_curve");

    auto* validate = app.add_subcommand("validate", "validate a config file");
    validate->add_option("config", config_path, "experiment config (JSON)")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return cmd_run(config_path, out_flag, seed_flag);
        if (ablate->parsed()) return cmd_ablate(config_path, out_flag, n_seeds);
        if (plot->parsed()) return cmd_plot_data(input, kind_str, out_flag, bins, steps_per_epoch);
        if (validate->parsed()) return cmd_validate(config_path);
    } catch (const pgar::TrainingFault& e) {
        std::cerr << "training fault: " << e.what() << "\n";
        return 2;
    } catch (const pgar::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
