#pragma once

#include "ksafem/ks_model.hpp"
#include "ksafem/runconfig.hpp"
#include "ksafem/types.hpp"

#include <string>
#include <vector>

namespace ksafem::driver {

struct LevelRecord {
    int level = 0;
    int n_tets = 0;
    int n_dofs = 0;
    VecX lambdas;
    model::EnergyBreakdown energy;
    double eta_sq_total = 0;
    int outer_iterations = 0;          // self-consistent steps for the single-loop methods
    std::vector<int> inner_iterations; // per outer step (empty for single-loop methods)
    double max_offdiag = 0;            // largest off-diagonal orbital overlap
    double t_solve = 0, t_estimate = 0, t_refine = 0, t_total = 0;
};

struct RunLog {
    Mode mode = Mode::accelerated;
    std::vector<LevelRecord> records;
    bool aborted = false;
    std::string abort_reason;
    bool reached_energy_target = false;
    bool reached_eta_target = false;
    double wall_seconds = 0;
};

/// Adaptive solve -> estimate -> mark -> refine loop in the configured mode.
/// Writes runlog.csv / energy.csv / VTK snapshots when out_dir is set.
RunLog run(const RunConfig& config);

struct ComparisonRow {
    Mode mode = Mode::accelerated;
    double seconds = 0;
    int levels_used = 0;
    double energy = 0;
    bool reached = false; // budget exhausted before the target when false
};

struct ComparisonTable {
    double energy_tolerance = 0;
    double reference_energy = 0;
    std::vector<ComparisonRow> rows;
};

/// Runs the three full-model methods to the same energy accuracy against a
/// shared reference energy (computed from a deeper run of the fast method).
ComparisonTable run_comparison(const RunConfig& base, double energy_tolerance,
                               int reference_extra_levels = 2);

struct ScalingRow {
    int workers = 0;
    double seconds = 0;
    double efficiency = 0; // (T_serial / T_parallel) / workers
    bool bitwise_equal = false; // final eigenvalues identical to the serial run
};

struct ScalingTable {
    std::vector<ScalingRow> rows;
};

/// Repeats the identical run over the worker counts (must include 1).
ScalingTable run_parallel_scaling(const RunConfig& base, const std::vector<int>& worker_counts);

void write_runlog_csv(const RunLog& log, const std::string& path);
void write_comparison_csv(const ComparisonTable& t, const std::string& path);
void write_scaling_csv(const ScalingTable& t, const std::string& path);

} // namespace ksafem::driver
