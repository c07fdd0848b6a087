#pragma once

#include "exch/charfn.hpp"
#include "exch/model.hpp"
#include "exch/numerics.hpp"

#include <Eigen/Dense>

#include <iosfwd>

namespace exch {

// Truncation of the double Poisson series over jump counts and the rule used
// for the expectation over the summed marks.
struct JumpSumQuadrature {
    int max_m = 0, max_n = 0;
    Eigen::VectorXd w1, w2;    // Poisson weights for m = 0..max_m, n = 0..max_n
    // 0: exact normal folding of the mark sum into the Fourier integrand;
    // > 0: Gauss-Hermite expectation over the mark sum with this many nodes.
    int hermite_order = 0;
};

JumpSumQuadrature make_jump_quadrature(double tau, const JumpSpec& j1, const JumpSpec& j2, int hermite_order = 0,
                                       double tail_mass = 1e-10);

constexpr double kMinDensityTau = 1e-6;

// Joint density of (s_T, v_T) given (s, v), from the Poisson series over jump counts.
double transition_density(double tau, double s_tilde, double v, double s_tilde_T, double v_T, const ModelParams& p,
                          const JumpSpec& j1, const JumpSpec& j2, const JumpSumQuadrature& quad,
                          const QuadSpec& qs = QuadSpec{});

// The same density with the jump part folded into the integrand as one compound-Poisson factor.
double density_via_charfn(double tau, double s_tilde, double v, double s_tilde_T, double v_T, const ModelParams& p,
                          const JumpSpec& j1, const JumpSpec& j2, const QuadSpec& qs = QuadSpec{});

// Density on a tensor grid; values(i, j) is the density at (s_T[i], v_T[j]).
struct DensityGrid {
    Eigen::VectorXd s_T, v_T;
    Eigen::MatrixXd values;
};

enum class DensityForm { Series, Folded };

DensityGrid density_grid(double tau, double s_tilde, double v, const Eigen::VectorXd& s_T, const Eigen::VectorXd& v_T,
                         const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                         DensityForm form = DensityForm::Series, const QuadSpec& qs = QuadSpec{});

// Columns s_T, v_T, density with a header row.
void write_density_csv(std::ostream& os, const DensityGrid& grid);

}  // namespace exch
