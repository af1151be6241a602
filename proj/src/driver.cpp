#include "ksafem/driver.hpp"

#include "ksafem/assembly.hpp"
#include "ksafem/correction.hpp"
#include "ksafem/estimator.hpp"
#include "ksafem/hartree.hpp"
#include "ksafem/scf.hpp"
#include "ksafem/worker_pool.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ksafem::driver {

namespace {

using fem::FEFunction;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct LevelOps {
    fem::SpacePtr space;
    SpMat S, M, a_op;
    std::unique_ptr<fem::EllipticSolver> stiffness;
    SpMat P_full; // from the correction space (level 0)
};

LevelOps make_level_ops(const fem::SpaceHierarchy& hier, int level, const model::MolecularSystem& sys,
                        WorkerPool* pool) {
    LevelOps ops;
    ops.space = hier.space(level);
    ops.S = fem::assemble_stiffness(*ops.space, pool);
    ops.M = fem::assemble_mass(*ops.space, pool);
    const SpMat M_ext = fem::assemble_mass(
        *ops.space, fem::ScalarField([&](const Vec3& x) { return model::v_ext(sys, x); }), pool);
    ops.a_op = 0.5 * ops.S + M_ext;
    ops.stiffness = std::make_unique<fem::EllipticSolver>(ops.S, ops.space);
    ops.P_full = hier.prolongation(0, level);
    return ops;
}

struct Solution {
    VecX lambdas;
    std::vector<FEFunction> orbitals;
    FEFunction hartree;
    FEFunction rho;
};

double density_change(const FEFunction& a, const FEFunction& b, bool l1) {
    FEFunction d(a.space);
    d.coeffs = a.coeffs - b.coeffs;
    return l1 ? fem::l1_norm(d) : fem::h1_norm(d);
}

double max_offdiag_overlap(const Solution& s, const SpMat& M) {
    double worst = 0;
    for (std::size_t i = 0; i < s.orbitals.size(); ++i) {
        const VecX Mi = M * s.orbitals[i].coeffs;
        for (std::size_t j = i + 1; j < s.orbitals.size(); ++j)
            worst = std::max(worst, std::abs(Mi.dot(s.orbitals[j].coeffs)));
    }
    return worst;
}

FEFunction xc_field_or_zero(const RunConfig& cfg, const model::MolecularSystem& sys,
                            const FEFunction& rho) {
    if (!cfg.xc_enabled()) return FEFunction(rho.space);
    return model::xc_potential_field(sys.xc, rho);
}

struct EnergyCsv {
    std::ofstream out;
    void open(const std::string& path) {
        out.open(path);
        out << "level,outer,e_kinetic,e_external,e_hartree,e_xc,e_total,delta_rho\n";
    }
    void row(int level, int outer, const model::EnergyBreakdown& e, double drho) {
        if (!out.is_open()) return;
        out << level << "," << outer << "," << e.kinetic << "," << e.external << "," << e.hartree
            << "," << e.xc << "," << e.total << "," << drho << "\n";
        out.flush();
    }
};

/// Nested outer/inner level solve: per-orbital correction sources, one block
/// preparation per outer step, then the coarse-space-only inner iteration.
Solution solve_level_corrected(const RunConfig& cfg, const model::MolecularSystem& sys,
                               const fem::SpaceHierarchy& hier, const LevelOps& ops, int level,
                               const Solution& warm, LevelRecord& rec, EnergyCsv* ecsv,
                               WorkerPool* pool) {
    const bool hart = cfg.hartree_enabled();
    const int n_orb = sys.n_pairs;

    VecX lambdas = warm.lambdas;
    std::vector<FEFunction> orbitals = warm.orbitals;
    FEFunction w_fn = warm.hartree;
    const FEFunction zero(ops.space);

    for (int outer = 0; outer < cfg.max_outer; ++outer) {
        const FEFunction rho_cur = model::density(orbitals, sys.occupancy);
        const FEFunction vxc = xc_field_or_zero(cfg, sys, rho_cur);

        corr::OuterOperator op(ops.space, ops.a_op, &ops.M, hart ? w_fn : zero, vxc, cfg.tol_linear,
                               pool);
        std::vector<FEFunction> phi_tilde(n_orb, FEFunction(ops.space));
        auto solve_one = [&](int i) { phi_tilde[i] = corr::bvp_orbital(op, lambdas[i], orbitals[i]); };
        if (pool && n_orb > 1) pool->parallel_for(n_orb, solve_one);
        else for (int i = 0; i < n_orb; ++i) solve_one(i);

        FEFunction w_tilde(ops.space);
        VecX bc;
        if (hart) {
            // boundary data renews here, once per outer step, and stays
            // frozen through the whole inner iteration
            const auto moments = hartree::compute_moments(model::density(phi_tilde, sys.occupancy));
            bc = hartree::boundary_values(moments, *ops.space);
            w_tilde = corr::bvp_hartree(*ops.stiffness, ops.M, phi_tilde, sys.occupancy, bc,
                                        cfg.tol_linear);
        }

        const auto blocks =
            corr::prepare_blocks(hier.space(0), ops.space, ops.P_full, ops.S, ops.M, ops.a_op,
                                 phi_tilde, w_tilde, vxc, sys.occupancy, hart, bc, pool);

        corr::InnerOptions iopt;
        iopt.tol = cfg.tol_inner;
        iopt.max_iterations = cfg.max_inner;
        iopt.dense_threshold = cfg.dense_threshold;
        iopt.score_floor = cfg.score_floor;
        iopt.nev_scan_pad = cfg.nev_scan_pad;
        iopt.pool = pool;
        const auto inner = corr::inner_scf(blocks, corr::pure_augmentation_state(blocks, lambdas), iopt);
        rec.inner_iterations.push_back(inner.iterations);

        auto expanded = corr::expand(inner.state, blocks);
        const FEFunction rho_next = model::density(expanded.orbitals, sys.occupancy);
        const double delta = density_change(rho_next, rho_cur, cfg.outer_norm_l1);

        lambdas = expanded.lambda;
        orbitals = std::move(expanded.orbitals);
        w_fn = std::move(expanded.hartree);
        rec.outer_iterations = outer + 1;

        if (ecsv) ecsv->row(level, outer + 1, model::total_energy(sys, orbitals, w_fn), delta);
        if (delta < cfg.tol_outer) break;
        if (outer + 1 == cfg.max_outer)
            fail("nonconvergence", "outer iteration cap reached on level " + std::to_string(level));
    }

    Solution out;
    out.lambdas = lambdas;
    out.orbitals = std::move(orbitals);
    out.hartree = std::move(w_fn);
    out.rho = model::density(out.orbitals, sys.occupancy);
    return out;
}

/// Reference method: the full nonlinear eigenproblem is re-solved on every
/// fine space by plain self-consistency.
Solution solve_level_scf(const RunConfig& cfg, const model::MolecularSystem& sys,
                         const LevelOps& ops, int level, const Solution& warm, LevelRecord& rec,
                         EnergyCsv* ecsv, WorkerPool* pool) {
    scf::ScfOptions opt;
    opt.tol = cfg.tol_outer;
    opt.max_iterations = cfg.max_scf;
    opt.mixing = cfg.mixing;
    opt.hartree_on = cfg.hartree_enabled();
    opt.xc_on = cfg.xc_enabled();
    opt.norm_l1 = cfg.outer_norm_l1;
    opt.tol_eig = cfg.tol_eig;
    opt.dense_threshold = cfg.dense_threshold;

    MatX guess(ops.space->n_interior(), sys.n_pairs);
    for (int i = 0; i < sys.n_pairs; ++i)
        guess.col(i) = fem::interior_part(warm.orbitals[i].coeffs, *ops.space);
    opt.guess = &guess;

    const auto r = scf::self_consistent_solve(sys, ops.space, opt, pool);
    rec.outer_iterations = r.iterations;

    Solution out;
    out.lambdas = r.lambdas;
    out.orbitals = r.orbitals;
    out.hartree = r.hartree;
    out.rho = r.rho;
    if (ecsv) ecsv->row(level, r.iterations, model::total_energy(sys, out.orbitals, out.hartree), 0.0);
    return out;
}

/// Reference method: one correction-space solve per level with both
/// nonlinear terms handled together, so every sweep reassembles the
/// potential-weighted blocks on the fine mesh.
Solution solve_level_mlc(const RunConfig& cfg, const model::MolecularSystem& sys,
                         const fem::SpaceHierarchy& hier, const LevelOps& ops, int level,
                         const Solution& warm, LevelRecord& rec, EnergyCsv* ecsv, WorkerPool* pool) {
    const bool hart = cfg.hartree_enabled();
    const int n_orb = sys.n_pairs;
    const FEFunction zero(ops.space);

    const FEFunction rho_prev = model::density(warm.orbitals, sys.occupancy);
    const FEFunction vxc_prev = xc_field_or_zero(cfg, sys, rho_prev);
    corr::OuterOperator op(ops.space, ops.a_op, &ops.M, hart ? warm.hartree : zero, vxc_prev,
                           cfg.tol_linear, pool);
    std::vector<FEFunction> phi_tilde(n_orb, FEFunction(ops.space));
    auto solve_one = [&](int i) { phi_tilde[i] = corr::bvp_orbital(op, warm.lambdas[i], warm.orbitals[i]); };
    if (pool && n_orb > 1) pool->parallel_for(n_orb, solve_one);
    else for (int i = 0; i < n_orb; ++i) solve_one(i);

    VecX bc = VecX::Zero(ops.space->n_dofs());
    if (hart) {
        const auto moments = hartree::compute_moments(model::density(phi_tilde, sys.occupancy));
        bc = hartree::boundary_values(moments, *ops.space);
    }

    // base blocks without any static potential split; the potential part is
    // rebuilt from scratch every sweep, which is this method's cost signature
    const auto B = corr::prepare_blocks(hier.space(0), ops.space, ops.P_full, ops.S, ops.M, ops.a_op,
                                        phi_tilde, zero, zero, sys.occupancy, false, VecX(), pool);
    const SpMat Pt = B.P_int.transpose();
    const int nh = static_cast<int>(B.M_H.rows());

    VecX lambdas = warm.lambdas;
    std::vector<VecX> phi_H(n_orb, VecX::Zero(nh));
    VecX theta = VecX::Ones(n_orb);
    auto expand_orbitals = [&]() {
        std::vector<FEFunction> orbs;
        for (int i = 0; i < n_orb; ++i) {
            FEFunction f(ops.space, fem::Role::wavefunction);
            f.coeffs = B.P_int * phi_H[i] + theta[i] * B.phi_tilde[i];
            orbs.push_back(std::move(f));
        }
        return orbs;
    };

    FEFunction rho_cur = model::density(expand_orbitals(), sys.occupancy);
    FEFunction w_cur(ops.space);
    int sweeps = 0;
    for (int s = 1; s <= cfg.max_scf; ++s) {
        const FEFunction vxc = xc_field_or_zero(cfg, sys, rho_cur);
        if (hart) w_cur = hartree::solve_hartree_cached(*ops.stiffness, ops.M, rho_cur, bc, cfg.tol_linear);
        FEFunction pot(ops.space);
        pot.coeffs = w_cur.coeffs + vxc.coeffs;

        const SpMat M_pot = fem::assemble_mass(*ops.space, pot, pool);
        const SpMat A_H = B.A_H1 + SpMat(Pt * M_pot * B.P_int);

        eig::BorderedFactor shared;
        const bool sparse_path = nh + 1 > cfg.dense_threshold;
        if (sparse_path) shared = eig::factor_bordered(A_H, B.M_H, lambdas.minCoeff() - 1.0);

        auto orbital_solve = [&](int i) {
            eig::BorderedSystem sys_i;
            sys_i.A_H = &A_H;
            sys_i.b = B.b_H1[i] + Pt * (M_pot * B.phi_tilde[i]);
            sys_i.beta = B.beta1[i] + B.phi_tilde[i].dot(M_pot * B.phi_tilde[i]);
            sys_i.M_H = &B.M_H;
            sys_i.c = B.c_Hh[i];
            sys_i.gamma = B.gamma_mass[i];
            eig::BorderedOptions bopt;
            bopt.nev_scan = std::min(nh + 1, n_orb + cfg.nev_scan_pad);
            bopt.score_floor = cfg.score_floor;
            bopt.dense_threshold = cfg.dense_threshold;
            bopt.shift_hint = lambdas.minCoeff() - 1.0;
            const auto r = eig::solve_bordered(sys_i, bopt, sparse_path ? &shared : nullptr);
            const double ip = r.phi_H.dot(B.M_H * phi_H[i]) + r.theta * B.c_Hh[i].dot(phi_H[i]) +
                              theta[i] * B.c_Hh[i].dot(r.phi_H) + r.theta * theta[i] * B.gamma_mass[i];
            const double sign = ip < 0 ? -1.0 : 1.0;
            lambdas[i] = r.lambda;
            phi_H[i] = sign * r.phi_H;
            theta[i] = sign * r.theta;
        };
        if (pool && n_orb > 1) pool->parallel_for(n_orb, orbital_solve);
        else for (int i = 0; i < n_orb; ++i) orbital_solve(i);

        const FEFunction rho_next = model::density(expand_orbitals(), sys.occupancy);
        const double delta = density_change(rho_next, rho_cur, cfg.outer_norm_l1);
        rho_cur = rho_next;
        sweeps = s;
        if (delta < cfg.tol_outer) break;
        if (s == cfg.max_scf)
            fail("nonconvergence", "correction-space iteration cap reached on level " +
                                       std::to_string(level));
    }
    rec.outer_iterations = sweeps;

    Solution out;
    out.lambdas = lambdas;
    out.orbitals = expand_orbitals();
    out.hartree = hart ? hartree::solve_hartree_cached(*ops.stiffness, ops.M, rho_cur, bc,
                                                       cfg.tol_linear)
                       : FEFunction(ops.space);
    out.rho = rho_cur;
    if (ecsv) ecsv->row(level, sweeps, model::total_energy(sys, out.orbitals, out.hartree), 0.0);
    return out;
}

} // namespace

RunLog run(const RunConfig& cfg) {
    cfg.validate();
    RunLog log;
    log.mode = cfg.mode;
    const auto t_start = Clock::now();

    model::MolecularSystem sys = cfg.system;
    if (!cfg.xc_enabled()) sys.xc.kind = model::XcKind::none;

    WorkerPool pool(cfg.workers);
    WorkerPool* pp = cfg.workers > 1 ? &pool : nullptr;

    EnergyCsv ecsv;
    const bool emit = !cfg.out_dir.empty();
    if (emit) {
        std::filesystem::create_directories(cfg.out_dir);
        ecsv.open(cfg.out_dir + "/energy.csv");
    }

    fem::SpaceHierarchy hier;
    hier.push(mesh::build_box_mesh(sys.domain, cfg.n_coarse));

    Solution sol;
    est::Indicators ind;

    try {
        for (int level = 0; level < cfg.max_levels; ++level) {
            LevelRecord rec;
            rec.level = level;
            const auto t_level = Clock::now();

            std::unique_ptr<LevelOps> ops;
            if (level == 0) {
                const auto t0 = Clock::now();
                ops = std::make_unique<LevelOps>(make_level_ops(hier, 0, sys, pp));
                rec.t_refine = seconds_since(t0);

                const auto t1 = Clock::now();
                scf::ScfOptions opt;
                opt.tol = cfg.tol_outer;
                opt.max_iterations = cfg.max_scf;
                opt.mixing = cfg.mixing;
                opt.hartree_on = cfg.hartree_enabled();
                opt.xc_on = cfg.xc_enabled();
                opt.norm_l1 = cfg.outer_norm_l1;
                opt.tol_eig = cfg.tol_eig;
                opt.dense_threshold = cfg.dense_threshold;
                const auto r = scf::initial_coarse_solve(sys, hier.space(0), cfg.tol_outer, opt, pp);
                rec.outer_iterations = r.iterations;
                sol.lambdas = r.lambdas;
                sol.orbitals = r.orbitals;
                sol.hartree = r.hartree;
                sol.rho = r.rho;
                rec.t_solve = seconds_since(t1);
                ecsv.row(0, r.iterations, model::total_energy(sys, sol.orbitals, sol.hartree), 0.0);
            } else {
                const auto t0 = Clock::now();
                const auto marked = est::dorfler_mark(ind, cfg.theta);
                hier.push(mesh::adapt_refine(hier.meshes().level(level - 1), marked));
                ops = std::make_unique<LevelOps>(make_level_ops(hier, level, sys, pp));

                Solution warm;
                warm.lambdas = sol.lambdas;
                for (const auto& o : sol.orbitals) warm.orbitals.push_back(hier.prolong(o, level));
                warm.hartree = hier.prolong(sol.hartree, level);
                warm.rho = model::density(warm.orbitals, sys.occupancy);
                rec.t_refine = seconds_since(t0);

                const auto t1 = Clock::now();
                switch (cfg.mode) {
                    case Mode::accelerated:
                    case Mode::linear:
                        sol = solve_level_corrected(cfg, sys, hier, *ops, level, warm, rec,
                                                    emit ? &ecsv : nullptr, pp);
                        break;
                    case Mode::standard_mlc:
                        sol = solve_level_mlc(cfg, sys, hier, *ops, level, warm, rec,
                                              emit ? &ecsv : nullptr, pp);
                        break;
                    case Mode::standard_afem:
                    case Mode::xc_only:
                    case Mode::hartree_only:
                        sol = solve_level_scf(cfg, sys, *ops, level, warm, rec,
                                              emit ? &ecsv : nullptr, pp);
                        break;
                }
                rec.t_solve = seconds_since(t1);
            }

            const auto t2 = Clock::now();
            const FEFunction vxc = xc_field_or_zero(cfg, sys, sol.rho);
            ind = est::compute_indicators(*ops->space, sys, sol.lambdas, sol.orbitals, sol.hartree,
                                          vxc, pp);
            rec.t_estimate = seconds_since(t2);

            rec.n_tets = ops->space->mesh().n_tets();
            rec.n_dofs = ops->space->n_dofs();
            rec.lambdas = sol.lambdas;
            rec.energy = model::total_energy(sys, sol.orbitals, sol.hartree);
            rec.eta_sq_total = ind.total_sq;
            rec.max_offdiag = max_offdiag_overlap(sol, ops->M);
            rec.t_total = seconds_since(t_level);
            log.records.push_back(rec);

            if (emit) {
                char name[64];
                std::snprintf(name, sizeof name, "/level_%03d.vtk", level);
                ops->space->mesh().write_vtk(cfg.out_dir + name, &sol.rho.coeffs, "density",
                                             &ind.eta_sq, "indicator");
            }

            if (cfg.eta_target > 0 && std::sqrt(ind.total_sq) <= cfg.eta_target) {
                log.reached_eta_target = true;
                break;
            }
            if (cfg.energy_target > 0 &&
                std::abs(rec.energy.total - cfg.energy_ref) <= cfg.energy_target) {
                log.reached_energy_target = true;
                break;
            }
        }
    } catch (const Error& e) {
        log.aborted = true;
        log.abort_reason = e.what();
    }

    log.wall_seconds = seconds_since(t_start);
    if (emit) write_runlog_csv(log, cfg.out_dir + "/runlog.csv");
    return log;
}

ComparisonTable run_comparison(const RunConfig& base, double energy_tolerance,
                               int reference_extra_levels) {
    ComparisonTable table;
    table.energy_tolerance = energy_tolerance;

    RunConfig ref_cfg = base;
    ref_cfg.mode = Mode::accelerated;
    ref_cfg.max_levels = base.max_levels + reference_extra_levels;
    ref_cfg.energy_target = 0;
    ref_cfg.out_dir.clear();
    const RunLog ref = run(ref_cfg);
    if (ref.aborted || ref.records.empty())
        fail("nonconvergence", "reference run failed: " + ref.abort_reason);
    table.reference_energy = ref.records.back().energy.total;

    for (Mode m : {Mode::accelerated, Mode::standard_mlc, Mode::standard_afem}) {
        RunConfig cfg = base;
        cfg.mode = m;
        cfg.energy_target = energy_tolerance;
        cfg.energy_ref = table.reference_energy;
        cfg.out_dir.clear();
        const auto t0 = Clock::now();
        const RunLog log = run(cfg);
        ComparisonRow row;
        row.mode = m;
        row.seconds = seconds_since(t0);
        row.levels_used = static_cast<int>(log.records.size());
        row.energy = log.records.empty() ? 0.0 : log.records.back().energy.total;
        row.reached = log.reached_energy_target;
        table.rows.push_back(row);
    }
    if (!base.out_dir.empty()) {
        std::filesystem::create_directories(base.out_dir);
        write_comparison_csv(table, base.out_dir + "/comparison.csv");
    }
    return table;
}

ScalingTable run_parallel_scaling(const RunConfig& base, const std::vector<int>& worker_counts) {
    if (worker_counts.empty() || worker_counts.front() != 1)
        fail("invalid-argument", "worker counts must start with 1");
    ScalingTable table;
    double t_serial = 0;
    VecX serial_lambdas;
    for (int np : worker_counts) {
        RunConfig cfg = base;
        cfg.workers = np;
        cfg.out_dir.clear();
        const auto t0 = Clock::now();
        const RunLog log = run(cfg);
        const double t = seconds_since(t0);
        if (log.aborted) fail("nonconvergence", "scaling run aborted: " + log.abort_reason);
        const VecX lambdas = log.records.back().lambdas;
        if (np == 1) {
            t_serial = t;
            serial_lambdas = lambdas;
        }
        ScalingRow row;
        row.workers = np;
        row.seconds = t;
        row.efficiency = (t_serial / t) / np;
        row.bitwise_equal = (lambdas.size() == serial_lambdas.size()) &&
                            (lambdas.array() == serial_lambdas.array()).all();
        table.rows.push_back(row);
    }
    if (!base.out_dir.empty()) {
        std::filesystem::create_directories(base.out_dir);
        write_scaling_csv(table, base.out_dir + "/scaling.csv");
    }
    return table;
}

void write_runlog_csv(const RunLog& log, const std::string& path) {
    std::ofstream out(path);
    out << "level,n_tets,n_dofs,eta_sq,outer_iterations,inner_iterations,max_offdiag,"
           "e_kinetic,e_external,e_hartree,e_xc,e_total,lambdas,t_solve,t_estimate,t_refine,t_total\n";
    for (const auto& r : log.records) {
        std::ostringstream inner, lam;
        for (std::size_t i = 0; i < r.inner_iterations.size(); ++i)
            inner << (i ? "|" : "") << r.inner_iterations[i];
        for (int i = 0; i < r.lambdas.size(); ++i) lam << (i ? "|" : "") << r.lambdas[i];
        out << r.level << "," << r.n_tets << "," << r.n_dofs << "," << r.eta_sq_total << ","
            << r.outer_iterations << "," << inner.str() << "," << r.max_offdiag << ","
            << r.energy.kinetic << "," << r.energy.external << "," << r.energy.hartree << ","
            << r.energy.xc << "," << r.energy.total << "," << lam.str() << "," << r.t_solve << ","
            << r.t_estimate << "," << r.t_refine << "," << r.t_total << "\n";
    }
    if (log.aborted) out << "# aborted: " << log.abort_reason << "\n";
}

void write_comparison_csv(const ComparisonTable& t, const std::string& path) {
    std::ofstream out(path);
    out << "mode,seconds,levels,energy,reached_target\n";
    for (const auto& r : t.rows)
        out << mode_name(r.mode) << "," << r.seconds << "," << r.levels_used << "," << r.energy
            << "," << (r.reached ? 1 : 0) << "\n";
    out << "# energy tolerance " << t.energy_tolerance << ", reference " << t.reference_energy
        << "\n";
}

void write_scaling_csv(const ScalingTable& t, const std::string& path) {
    std::ofstream out(path);
    out << "workers,seconds,efficiency,bitwise_equal\n";
    for (const auto& r : t.rows)
        out << r.workers << "," << r.seconds << "," << r.efficiency << "," << (r.bitwise_equal ? 1 : 0)
            << "\n";
}

} // namespace ksafem::driver
