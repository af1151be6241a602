#include "ksafem/driver.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <string>
#include <vector>

namespace {

using namespace ksafem;

void apply_overrides(driver::RunConfig& cfg, const std::string& mode, int workers, int levels,
                     const std::string& out_dir, unsigned long long seed) {
    if (!mode.empty()) cfg.mode = driver::mode_from_name(mode);
    if (workers > 0) cfg.workers = workers;
    if (levels > 0) cfg.max_levels = levels;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    cfg.seed = seed;
}

void print_summary(const driver::RunLog& log) {
    std::printf("%-6s %9s %9s %7s %14s %12s %10s\n", "level", "tets", "dofs", "outer", "e_total",
                "lambda_1", "eta");
    for (const auto& r : log.records)
        std::printf("%-6d %9d %9d %7d %14.8f %12.8f %10.3e\n", r.level, r.n_tets, r.n_dofs,
                    r.outer_iterations, r.energy.total, r.lambdas.size() ? r.lambdas[0] : 0.0,
                    std::sqrt(r.eta_sq_total));
    if (log.aborted) std::printf("aborted: %s\n", log.abort_reason.c_str());
    std::printf("wall time %.2f s\n", log.wall_seconds);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"adaptive finite element ground-state solver"};
    app.require_subcommand(1);

    std::string config_path, mode, out_dir;
    int workers = 0, levels = 0;
    unsigned long long seed = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("config", config_path, "config file or preset name")->required();
        cmd->add_option("--mode", mode, "override the solve mode");
        cmd->add_option("--workers", workers, "worker thread count");
        cmd->add_option("--levels", levels, "adaptive level budget");
        cmd->add_option("--out-dir", out_dir, "directory for csv/vtk output");
        cmd->add_option("--seed", seed, "seed for randomized orderings (physics is deterministic)");
    };

    auto* run_cmd = app.add_subcommand("run", "adaptive ground-state run");
    add_common(run_cmd);

    auto* cmp_cmd = app.add_subcommand("compare", "time the three methods at equal energy accuracy");
    add_common(cmp_cmd);
    double energy_tol = 5e-3;
    cmp_cmd->add_option("--energy-tol", energy_tol, "shared energy accuracy target");

    auto* scale_cmd = app.add_subcommand("scaling", "repeat one run over worker counts");
    add_common(scale_cmd);
    std::vector<int> counts = {1, 2};
    scale_cmd->add_option("--counts", counts, "worker counts, first must be 1");

    auto* preset_cmd = app.add_subcommand("preset", "print a bundled preset config");
    std::string preset_name;
    preset_cmd->add_option("name", preset_name, "hydrogen | lih | methane | acetylene | benzene")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (preset_cmd->parsed()) {
            std::fputs(driver::preset_text(preset_name).c_str(), stdout);
            return 0;
        }
        driver::RunConfig cfg = driver::load_config(config_path);
        apply_overrides(cfg, mode, workers, levels, out_dir, seed);

        if (run_cmd->parsed()) {
            const auto log = driver::run(cfg);
            print_summary(log);
            return log.aborted ? 1 : 0;
        }
        if (cmp_cmd->parsed()) {
            const auto table = driver::run_comparison(cfg, energy_tol);
            std::printf("%-16s %10s %7s %14s %8s\n", "mode", "seconds", "levels", "energy", "reached");
            for (const auto& r : table.rows)
                std::printf("%-16s %10.2f %7d %14.8f %8s\n", driver::mode_name(r.mode), r.seconds,
                            r.levels_used, r.energy, r.reached ? "yes" : "-");
            std::printf("reference energy %.8f (tolerance %g)\n", table.reference_energy,
                        table.energy_tolerance);
            return 0;
        }
        if (scale_cmd->parsed()) {
            const auto table = driver::run_parallel_scaling(cfg, counts);
            std::printf("%-8s %10s %12s %14s\n", "workers", "seconds", "efficiency", "bitwise_equal");
            for (const auto& r : table.rows)
                std::printf("%-8d %10.2f %12.3f %14s\n", r.workers, r.seconds, r.efficiency,
                            r.bitwise_equal ? "yes" : "no");
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
