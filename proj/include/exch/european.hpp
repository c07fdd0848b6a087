#pragma once

#include "exch/charfn.hpp"
#include "exch/model.hpp"
#include "exch/numerics.hpp"

#include <Eigen/Dense>

#include <complex>
#include <memory>
#include <vector>

namespace exch {

struct EuropeanOptions {
    QuadSpec quad;
    double truncation_tol = 1e-8;   // tail bound relative to price
    bool hermite_cross_check = false;
    int max_refinements = 10;
};

struct PriceResult {
    double value = 0.0;          // nominal currency
    double v_tilde = 0.0;        // numeraire units
    double q_hat_1 = 0.0;
    double q_hat_2 = 0.0;
    int terms_m = 0, terms_n = 0;
    double quadrature_error_estimate = 0.0;
    double truncation_bound = 0.0;
    int clamped = 0;             // number of P-values pulled back into [0, 1]
    double max_clamp = 0.0;      // largest overshoot removed by clamping
    double phi_cut = 0.0;
    int nodes = 0;
};

struct TailProbabilities {
    double P1 = 0.0, P2 = 0.0;
    double error_estimate = 0.0;
    double imag_residue = 0.0;
    int clamped = 0;
};

// Gil-Pelaez probabilities for the diffusive kernel at log-strike K.
TailProbabilities p1e_p2e(double tau, double z, double v, double K, const ModelParams& p,
                          const QuadSpec& quad = QuadSpec{});

double margrabe_closed_form(double S1, double S2, double sigma_total, double tau, double q1, double q2);

class EuropeanEngine;

// Quadrature nodes and series plan converged for one (t, v); prices any yield
// ratio at that state. Valid while the engine that made it is alive.
class EuropeanSlice {
public:
    EuropeanSlice();
    ~EuropeanSlice();
    EuropeanSlice(EuropeanSlice&&) noexcept;
    EuropeanSlice& operator=(EuropeanSlice&&) noexcept;
    double v_tilde(double s_tilde) const;

private:
    friend class EuropeanEngine;
    struct State;
    std::unique_ptr<State> state_;
};

// Transform pricer with a per-(tau, v) cache of the affine exponents on the
// Fourier nodes; many yield ratios can then be priced at little extra cost.
class EuropeanEngine {
public:
    EuropeanEngine(const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2, EuropeanOptions opts = {});

    PriceResult price(const MarketState& state) const;

    // Numeraire-unit prices for many yield ratios at fixed (t, v).
    std::vector<PriceResult> price_ratios(double t, double v, const std::vector<double>& s_tilde) const;

    // Converges the quadrature on the calibration ratios and keeps it.
    EuropeanSlice slice(double t, double v, const std::vector<double>& calibration) const;

    // Jump terms folded into the integrand as a single compound-Poisson factor.
    double v_tilde_folded(double t, double s_tilde, double v) const;

    // Jump-size expectation by Gauss-Hermite instead of closed-form folding.
    double v_tilde_hermite(double t, double s_tilde, double v, int order) const;

    const ModelParams& params() const { return p_; }
    const JumpSpec& jump1() const { return j1_; }
    const JumpSpec& jump2() const { return j2_; }

private:
    friend class EuropeanSlice;
    struct Nodes {
        double tau = 0.0, v = 0.0, phi_cut = 0.0;
        std::vector<double> phi, w;
        std::vector<std::complex<double>> F1, F2;   // kernels at z = 1
    };
    Nodes build_nodes(double tau, double v, int panels) const;
    double find_cut(double tau, double v) const;
    struct SeriesPlan {
        int M = 0, N = 0;
        Eigen::VectorXd w1, w2;
        double bound_q1 = 0.0, bound_q2 = 0.0;   // neglected Poisson mass for the tilted/untilted weights
    };
    SeriesPlan plan(double tau, int extra) const;
    void evaluate(const Nodes& nd, const SeriesPlan& sp, double s_tilde, PriceResult& out) const;
    std::vector<PriceResult> converge(double t, double v, const std::vector<double>& s_tilde, Nodes& nd,
                                      SeriesPlan& sp) const;

    ModelParams p_;
    JumpSpec j1_, j2_;
    EuropeanOptions opts_;
};

PriceResult price_european(const MarketState& state, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                           const EuropeanOptions& opts = {});

// Parameters of the same market seen with the asset-1 yield process as numeraire.
struct DualModel {
    ModelParams params;
    JumpSpec jump1, jump2;
};
DualModel dual_parameters(const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2);

PriceResult price_european_dual(const MarketState& state, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2,
                                const EuropeanOptions& opts = {});

// Price surface on a tensor grid; values(i_t, i_s, i_v) in numeraire units.
struct PriceSurface {
    Eigen::VectorXd t, s, v;
    std::vector<double> values;
    double& at(int it, int is, int iv) { return values[(static_cast<std::size_t>(it) * s.size() + is) * v.size() + iv]; }
    double at(int it, int is, int iv) const {
        return values[(static_cast<std::size_t>(it) * s.size() + is) * v.size() + iv];
    }
    // Cubic interpolation in s at grid indices (it, iv), linear extrapolation
    // above the grid and linear decay to zero below it.
    double value_in_s(int it, double s_query, int iv) const;
};

PriceSurface european_surface(const EuropeanEngine& engine, const Eigen::VectorXd& t, const Eigen::VectorXd& s,
                              const Eigen::VectorXd& v);

struct GridPoint {
    int it, is, iv;
};
// dV/dt + L[V] at an interior node, by five-point finite differences (three
// points on axes shorter than five) and Gauss-Hermite jump integrals.
double ipde_residual(const PriceSurface& surface, GridPoint pt, const ModelParams& p, const JumpSpec& j1,
                     const JumpSpec& j2, int hermite_order = 32);

}  // namespace exch
