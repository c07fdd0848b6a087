#pragma once

#include "exch/boundary.hpp"
#include "exch/european.hpp"
#include "exch/model.hpp"
#include "exch/numerics.hpp"

#include <Eigen/Dense>

#include <memory>
#include <stdexcept>
#include <vector>

namespace exch {

class IterationError : public NumericsError {
public:
    IterationError(const std::string& what, int sweeps, double movement)
        : NumericsError(what, movement), sweeps_(sweeps) {}
    int sweeps() const { return sweeps_; }

private:
    int sweeps_;
};

// Critical yield ratio B(t, v) on a tensor grid. The last time node is the
// maturity, where B = 1 by definition; interpolation towards maturity uses the
// left limit b_left instead, so that a discontinuous boundary stays sharp.
struct BoundaryCurve {
    Eigen::VectorXd t, v;
    Eigen::MatrixXd B;        // B(i_t, i_v)
    double q1 = 0.0, q2 = 0.0;
    double b_left = 1.0;      // B(T-, v)

    bool empty() const { return B.size() == 0; }
    double A(int it, int iv) const { return B(it, iv) * std::exp((q1 - q2) * t[it]); }
    // Monotone piecewise-cubic in t, linear in v (flat outside the v grid).
    double B_at(double time, double var) const;
    double A_at(double time, double var) const { return B_at(time, var) * std::exp((q1 - q2) * time); }
};

// Numerical resolution of the early-exercise premium integrals.
struct PremiumQuad {
    int u_nodes = 16;              // Gauss-Legendre nodes in time (square-root graded towards maturity)
    int vu_nodes = 24;             // Gauss-Legendre nodes in sqrt(v_u)
    double vu_width = 7.0;         // sqrt(v_u) window in conditional standard deviations
    double window = 12.0;          // log-ratio window in standard deviations
    int spike_points = 97;         // tabulation points of the no-jump component
    int xi_nodes = 33;             // back-jump band nodes
    int mark_nodes = 32;           // Gauss-Legendre nodes over a jump mark
    double envelope_tol = 1e-13;
};

struct AmericanGrids {
    int time_nodes = 50;           // including t and T
    int var_nodes = 30;
    double var_lo = 0.125, var_hi = 8.0;   // multiples of eta
    int s_nodes = 120;
    double s_log_halfwidth = 1.5;  // below the initial ratio; the top also covers the boundary
    double s_log_above = 1.0;      // margin above the larger of s0 and the maturity boundary
};

struct AmericanOptions {
    AmericanGrids grids;
    PremiumQuad premium;
    EuropeanOptions european;
    int max_sweeps = 60;
    double tol = 1e-4;             // max boundary movement between sweeps
    double root_tol = 1e-10;
    int workers = 1;
    double cache_bytes = 1.5e9;    // transition tables kept across sweeps up to this size
};

struct PremiumParts {
    double diffusion = 0.0;
    double jump1 = 0.0, jump2 = 0.0;   // without the intensity prefactors
    double total(const JumpSpec& j1, const JumpSpec& j2) const {
        return diffusion - j1.lambda_tilde * jump1 - j2.lambda_tilde * jump2;
    }
};

struct AmericanDiagnostics {
    int sweeps = 0;
    bool converged = false;
    double max_movement = 0.0;
    std::vector<double> movement_history;
    double value_matching_residual = 0.0;   // max over interior boundary nodes
    int capped_nodes = 0;                    // boundary beyond the ratio grid
    double min_variance_mass = 1.0;         // worst quadrature mass of the v_u law
    double max_variance_mass = 1.0;
};

struct AmericanSolution {
    PriceSurface value;        // American, numeraire units
    PriceSurface european;     // European on the same grid
    BoundaryCurve boundary;    // empty when early exercise is never optimal
    double v_tilde = 0.0;      // at the query state
    double european_v_tilde = 0.0;
    double value_nominal = 0.0;
    double european_nominal = 0.0;
    bool exercise_now = false;
    PremiumParts premium;
    double b_limit = 1.0;
    AmericanDiagnostics diagnostics;
};

// Probabilities P1A, P2A of the v_u-resolved kernel at strike K. The constant
// term is half the mass of the resolved measure, so both integrate over v_u
// to the unconditional P1E, P2E.
struct ResolvedTail {
    double P1 = 0.0, P2 = 0.0;
    double mass1 = 0.0, mass2 = 0.0;   // at K -> 0
    double imag_residue = 0.0;
};
ResolvedTail p1a_p2a(double tau, double z, double v, double v_u, double K, const ModelParams& p,
                     const QuadSpec& quad = QuadSpec{});

// Back-jump costs on the time slices of a value surface: for each (t_i, v_j),
// R1(xi) = E[D(a + xi + Y1); xi + Y1 < 0] and R2(xi) = E[D(a + xi - Y2); xi - Y2 < 0],
// D = V^A - intrinsic, a = ln A(t_i, v_j).
struct BackJumpTable {
    Eigen::VectorXd t, v;
    double L1 = 0.0, L2 = 0.0;   // support of R1, R2 in xi
    int n = 0;
    std::vector<double> R1, R2;   // (i_t, i_v, k)
    double r1(int it, int iv, int k) const { return R1[(static_cast<std::size_t>(it) * v.size() + iv) * n + k]; }
    double r2(int it, int iv, int k) const { return R2[(static_cast<std::size_t>(it) * v.size() + iv) * n + k]; }
};
BackJumpTable back_jump_table(const PriceSurface& v_a, const BoundaryCurve& boundary, const ModelParams& p,
                              const JumpSpec& j1, const JumpSpec& j2, const PremiumQuad& pq = PremiumQuad{});

// Transition tables of (ln s_u - ln s, v_u) from a fixed (t, v), independent
// of the boundary; the premium at any ratio is assembled from them.
class PremiumKernel {
public:
    PremiumKernel(double t, double v, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                  const PremiumQuad& pq = PremiumQuad{});
    ~PremiumKernel();
    PremiumKernel(PremiumKernel&&) noexcept;
    PremiumKernel& operator=(PremiumKernel&&) noexcept;

    // Bind a boundary (and optionally back-jump costs); must precede evaluate.
    void bind(const BoundaryCurve& boundary, const BackJumpTable* jumps);
    PremiumParts evaluate(double s_tilde) const;
    // Log-boundary at the kernel's nodes after moving node (it, iv) of the
    // bound boundary to B, and the premium under such a moved boundary.
    std::vector<double> moved_log_A(const BoundaryCurve& boundary, int it, int iv, double B) const;
    PremiumParts evaluate_moved(double s_tilde, const std::vector<double>& log_A) const;

    double t() const;
    double v() const;
    double variance_mass_min() const;   // min over time nodes of the quadrature mass of v_u
    double variance_mass_max() const;
    std::size_t bytes() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

PremiumParts premium_diffusion_parts(double t, double s_tilde, double v, const BoundaryCurve& boundary,
                                     const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                                     const PremiumQuad& pq = PremiumQuad{});

double premium_diffusion(double t, double s_tilde, double v, const BoundaryCurve& boundary, const ModelParams& p,
                         const JumpSpec& j1, const JumpSpec& j2, const PremiumQuad& pq = PremiumQuad{});

struct JumpPremium {
    double J1 = 0.0, J2 = 0.0;
};
JumpPremium premium_jumps(double t, double s_tilde, double v, const BoundaryCurve& boundary,
                          const PriceSurface& v_a_surface, const ModelParams& p, const JumpSpec& j1,
                          const JumpSpec& j2, const PremiumQuad& pq = PremiumQuad{});

double inhomogeneous_term(double t, double s_tilde, double v, const PriceSurface& v_a_surface,
                          const BoundaryCurve& boundary, const ModelParams& p, const JumpSpec& j1,
                          const JumpSpec& j2, const PremiumQuad& pq = PremiumQuad{});

AmericanSolution solve_american(const MarketState& state, const ModelParams& p, const JumpSpec& j1,
                                const JumpSpec& j2, const AmericanOptions& opts = AmericanOptions{});

// Intrinsic value in numeraire units, e^{-q1 t} s - e^{-q2 t}.
inline double discounted_intrinsic(double t, double s_tilde, const ModelParams& p) {
    return std::exp(-p.q1 * t) * s_tilde - std::exp(-p.q2 * t);
}

}  // namespace exch
