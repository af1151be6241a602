#pragma once

#include "ksafem/types.hpp"

#include <array>
#include <vector>

namespace ksafem::quad {

struct QuadPoint {
    std::array<double, 4> bary; // barycentric coordinates on the tetrahedron
    double weight;              // weights sum to 1; scale by |T| when integrating
};

struct TetRule {
    std::vector<QuadPoint> points;
    int degree = 0; // polynomials up to this total degree are integrated exactly
};

/// Default rule used by all assembly: symmetric 11-point rule, exact to degree 4.
const TetRule& default_rule();

/// Grundmann-Moller simplex rule of index s (exact to degree 2s+1).
/// Used as the higher-order reference when checking quadrature consistency.
TetRule grundmann_moller(int s);

} // namespace ksafem::quad
