#include "ksafem/runconfig.hpp"

#include <cmath>
#include <numbers>
#include <fstream>
#include <sstream>

namespace ksafem::driver {

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::accelerated: return "accelerated";
        case Mode::linear: return "linear";
        case Mode::standard_mlc: return "standard_mlc";
        case Mode::standard_afem: return "standard_afem";
        case Mode::xc_only: return "xc_only";
        case Mode::hartree_only: return "hartree_only";
    }
    return "?";
}

Mode mode_from_name(const std::string& s) {
    for (Mode m : {Mode::accelerated, Mode::linear, Mode::standard_mlc, Mode::standard_afem,
                   Mode::xc_only, Mode::hartree_only})
        if (s == mode_name(m)) return m;
    fail("invalid-argument", "unknown mode '" + s + "'");
}

void RunConfig::validate() const {
    system.validate();
    if (n_coarse < 1) fail("invalid-argument", "n_coarse must be >= 1");
    if (max_levels < 1) fail("invalid-argument", "max_levels must be >= 1");
    if (!(theta > 0 && theta < 1)) fail("invalid-argument", "theta must lie in (0,1)");
    for (double t : {tol_outer, tol_inner, tol_linear, tol_eig})
        if (!(t > 0)) fail("invalid-argument", "tolerances must be positive");
    if (workers < 1) fail("invalid-argument", "workers must be >= 1");
    if (!(mixing > 0 && mixing <= 1)) fail("invalid-argument", "mixing must lie in (0,1]");
}

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    cfg.system.atoms.clear();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) continue;
        std::istringstream vs(val);
        auto bad = [&]() {
            fail("invalid-argument", "config line " + std::to_string(lineno) + ": bad value for " + key);
        };

        if (key == "atom") {
            model::Atom a;
            if (!(vs >> a.charge >> a.position[0] >> a.position[1] >> a.position[2])) bad();
            cfg.system.atoms.push_back(a);
        } else if (key == "box") {
            double lo, hi;
            if (!(vs >> lo >> hi)) bad();
            cfg.system.domain.lo = Vec3::Constant(lo);
            cfg.system.domain.hi = Vec3::Constant(hi);
        } else if (key == "domain") {
            Vec3 lo, hi;
            if (!(vs >> lo[0] >> hi[0] >> lo[1] >> hi[1] >> lo[2] >> hi[2])) bad();
            cfg.system.domain.lo = lo;
            cfg.system.domain.hi = hi;
        } else if (key == "xc") {
            std::string kind;
            vs >> kind;
            if (kind == "none") {
                cfg.system.xc.kind = model::XcKind::none;
            } else if (kind == "xalpha") {
                cfg.system.xc.kind = model::XcKind::x_alpha;
                double alpha;
                if (vs >> alpha) cfg.system.xc.alpha = alpha;
            } else if (kind == "lda") {
                cfg.system.xc.kind = model::XcKind::lda_pz81;
            } else {
                bad();
            }
        } else if (key == "outer_norm") {
            std::string n;
            vs >> n;
            if (n == "l1") cfg.outer_norm_l1 = true;
            else if (n == "h1") cfg.outer_norm_l1 = false;
            else bad();
        } else if (key == "mode") {
            std::string n;
            vs >> n;
            cfg.mode = mode_from_name(n);
        } else if (key == "out_dir") {
            cfg.out_dir = val;
        } else {
            double num;
            if (!(vs >> num)) bad();
            if (key == "n_pairs") cfg.system.n_pairs = static_cast<int>(num);
            else if (key == "occupancy") cfg.system.occupancy = num;
            else if (key == "lda_exchange_exponent") cfg.system.xc.exchange_exponent = num;
            else if (key == "n_coarse") cfg.n_coarse = static_cast<int>(num);
            else if (key == "levels") cfg.max_levels = static_cast<int>(num);
            else if (key == "theta") cfg.theta = num;
            else if (key == "eta_target") cfg.eta_target = num;
            else if (key == "tol_outer") cfg.tol_outer = num;
            else if (key == "tol_inner") cfg.tol_inner = num;
            else if (key == "tol_linear") cfg.tol_linear = num;
            else if (key == "tol_eig") cfg.tol_eig = num;
            else if (key == "mixing") cfg.mixing = num;
            else if (key == "max_outer") cfg.max_outer = static_cast<int>(num);
            else if (key == "max_inner") cfg.max_inner = static_cast<int>(num);
            else if (key == "max_scf") cfg.max_scf = static_cast<int>(num);
            else if (key == "workers") cfg.workers = static_cast<int>(num);
            else if (key == "seed") cfg.seed = static_cast<unsigned long long>(num);
            else if (key == "dense_threshold") cfg.dense_threshold = static_cast<int>(num);
            else if (key == "score_floor") cfg.score_floor = num;
            else if (key == "nev_scan_pad") cfg.nev_scan_pad = static_cast<int>(num);
            else if (key == "energy_target") cfg.energy_target = num;
            else if (key == "energy_ref") cfg.energy_ref = num;
            else fail("invalid-argument", "unknown config key '" + key + "'");
        }
    }
    return cfg;
}

namespace {

// bond lengths in Bohr (1 angstrom = 1.8897259886 Bohr)
constexpr double kCH4_a = 2.0549 / 1.7320508075688772; // C-H 1.0874 A, tetrahedral components

std::string hydrogen_text() {
    return "# single proton, one eigenpair, no density feedback\n"
           "mode = linear\n"
           "box = -10 10\n"
           "n_coarse = 8\n"
           "levels = 12\n"
           "n_pairs = 1\n"
           "occupancy = 1\n"
           "xc = none\n"
           "atom = 1 0 0 0\n";
}

std::string lih_text() {
    return "# lithium hydride, slater exchange\n"
           "mode = accelerated\n"
           "box = -6 6\n"
           "n_coarse = 16\n"
           "levels = 15\n"
           "n_pairs = 2\n"
           "occupancy = 2\n"
           "xc = xalpha 0.77298\n"
           "atom = 3 -1.0075 0 0\n"
           "atom = 1 2.0075 0 0\n";
}

std::string methane_text() {
    std::ostringstream ss;
    ss << "# methane, slater exchange\n"
          "mode = accelerated\n"
          "box = -6 6\n"
          "n_coarse = 16\n"
          "levels = 15\n"
          "n_pairs = 5\n"
          "occupancy = 2\n"
          "xc = xalpha 0.77298\n"
          "atom = 6 0 0 0\n";
    const double a = kCH4_a;
    ss << "atom = 1 " << a << " " << a << " " << a << "\n";
    ss << "atom = 1 " << a << " " << -a << " " << -a << "\n";
    ss << "atom = 1 " << -a << " " << a << " " << -a << "\n";
    ss << "atom = 1 " << -a << " " << -a << " " << a << "\n";
    return ss.str();
}

std::string acetylene_text() {
    return "# acetylene, lda exchange-correlation\n"
           "mode = accelerated\n"
           "box = -8 8\n"
           "n_coarse = 16\n"
           "levels = 15\n"
           "n_pairs = 7\n"
           "occupancy = 2\n"
           "xc = lda\n"
           "atom = 6 -1.1367 0 0\n"
           "atom = 6 1.1367 0 0\n"
           "atom = 1 -3.1398 0 0\n"
           "atom = 1 3.1398 0 0\n";
}

std::string benzene_text() {
    std::ostringstream ss;
    ss << "# benzene ring in the z = 0 plane, lda exchange-correlation\n"
          "mode = accelerated\n"
          "box = -10 10\n"
          "n_coarse = 16\n"
          "levels = 15\n"
          "n_pairs = 21\n"
          "occupancy = 2\n"
          "xc = lda\n";
    const double rc = 2.6400, rh = 4.6885;
    for (int k = 0; k < 6; ++k) {
        const double ang = k * std::numbers::pi / 3.0;
        ss << "atom = 6 " << rc * std::cos(ang) << " " << rc * std::sin(ang) << " 0\n";
    }
    for (int k = 0; k < 6; ++k) {
        const double ang = k * std::numbers::pi / 3.0;
        ss << "atom = 1 " << rh * std::cos(ang) << " " << rh * std::sin(ang) << " 0\n";
    }
    return ss.str();
}

} // namespace

std::string preset_text(const std::string& name) {
    if (name == "hydrogen") return hydrogen_text();
    if (name == "lih") return lih_text();
    if (name == "methane") return methane_text();
    if (name == "acetylene") return acetylene_text();
    if (name == "benzene") return benzene_text();
    fail("invalid-argument", "unknown preset '" + name + "'");
}

RunConfig preset(const std::string& name) { return parse_config_text(preset_text(name)); }

RunConfig load_config(const std::string& path_or_preset) {
    std::ifstream in(path_or_preset);
    if (!in) return preset(path_or_preset);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

} // namespace ksafem::driver
