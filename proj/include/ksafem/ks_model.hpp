#pragma once

#include "ksafem/assembly.hpp"
#include "ksafem/fespace.hpp"
#include "ksafem/mesh.hpp"
#include "ksafem/types.hpp"

#include <atomic>
#include <vector>

namespace ksafem::model {

struct Atom {
    double charge = 1.0; // Z_k
    Vec3 position = Vec3::Zero();
};

enum class XcKind { none, x_alpha, lda_pz81 };

struct XcFunctional {
    XcKind kind = XcKind::x_alpha;
    double alpha = 0.77298;          // slater scaling for the x-alpha model
    double exchange_exponent = 1.0 / 3.0; // density power of the LDA exchange energy
};

struct MolecularSystem {
    std::vector<Atom> atoms;
    int n_pairs = 1;        // eigenpairs to compute
    double occupancy = 2.0; // electrons per orbital
    mesh::Box domain;
    XcFunctional xc;

    void validate() const;
};

/// Nuclear Coulomb potential -sum Z_k / |x - R_k|. Points within 1e-12 of a
/// nucleus are nudged by 1e-10 so the value stays finite.
double v_ext(const MolecularSystem& sys, const Vec3& x);

/// Nodal interpolant of occupancy * sum_i phi_i^2; coefficients are nonnegative.
fem::FEFunction density(const std::vector<fem::FEFunction>& orbitals, double occupancy);

/// Exchange-correlation energy density e_xc(rho) and potential v_xc(rho),
/// both 0 at rho = 0 by continuous extension. Negative inputs are clamped
/// to zero (counted, never thrown).
double xc_energy_density(const XcFunctional& xc, double rho);
double xc_potential(const XcFunctional& xc, double rho);
unsigned long long negative_density_clamps();

/// Nodal interpolant of v_xc(rho(x)) on rho's space.
fem::FEFunction xc_potential_field(const XcFunctional& xc, const fem::FEFunction& rho);

struct EnergyBreakdown {
    double kinetic = 0;
    double external = 0;
    double hartree = 0;
    double xc = 0;
    double total = 0;
};

/// Energy of an orbital set with its Hartree potential w:
///   occupancy/2 * sum |grad phi_i|^2 + int V_ext rho + 1/2 int rho w + int e_xc(rho).
EnergyBreakdown total_energy(const MolecularSystem& sys, const std::vector<fem::FEFunction>& orbitals,
                             const fem::FEFunction& hartree_fn);

} // namespace ksafem::model
