#pragma once

#include "ksafem/ks_model.hpp"

#include <string>

namespace ksafem::driver {

enum class Mode { accelerated, linear, standard_mlc, standard_afem, xc_only, hartree_only };

const char* mode_name(Mode m);
Mode mode_from_name(const std::string& s);

struct RunConfig {
    model::MolecularSystem system;
    int n_coarse = 16;      // initial axis resolution: 6 n^3 tets
    int max_levels = 8;     // total levels including the initial space
    double theta = 0.4;     // marking fraction
    double eta_target = 0;  // stop once total eta falls below (0 disables)
    double tol_outer = 1e-6;
    double tol_inner = 1e-8;
    double tol_linear = 1e-9;
    double tol_eig = 1e-9;
    double mixing = 0.3;
    int max_outer = 40;
    int max_inner = 400;
    int max_scf = 200;
    int workers = 1;
    Mode mode = Mode::accelerated;
    std::string out_dir;    // empty: no file output
    unsigned long long seed = 0; // reserved for randomized orderings; physics is deterministic
    bool outer_norm_l1 = false;  // density-change norm: H1 unless set
    int dense_threshold = 800;
    double score_floor = 1e-8;
    int nev_scan_pad = 4;
    double energy_target = 0;    // stop once |E - energy_ref| <= target (0 disables)
    double energy_ref = 0;

    bool hartree_enabled() const {
        return mode != Mode::linear && mode != Mode::xc_only;
    }
    bool xc_enabled() const {
        return mode != Mode::linear && mode != Mode::hartree_only &&
               system.xc.kind != model::XcKind::none;
    }
    void validate() const;
};

/// Flat key-value text format; see the project README for the schema.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path_or_preset);

/// Built-in systems: hydrogen, lih, methane, acetylene, benzene.
RunConfig preset(const std::string& name);
std::string preset_text(const std::string& name);

} // namespace ksafem::driver
