#pragma once

#include <cmath>
#include <complex>
#include <string>
#include <vector>

namespace exch {

// Diffusion, variance, correlation and dividend parameters under the
// numeraire measure (asset-2 yield process as numeraire).
struct ModelParams {
    double sigma1 = 0.2;
    double sigma2 = 0.3;
    double rho_w = 0.5;
    double rho1 = 0.0;
    double rho2 = 0.0;
    double xi = 2.0;
    double eta = 0.04;
    double omega = 0.3;
    double Lambda = 0.0;
    double q1 = 0.03;
    double q2 = 0.03;
    double r = 0.05;
    double T = 1.0;

    double sigma() const { return std::sqrt(sigma1 * sigma1 + sigma2 * sigma2 - 2.0 * rho_w * sigma1 * sigma2); }
    // sigma1 rho1 - sigma2 rho2: covariance loading between the ratio and variance shocks.
    double rho_sigma() const { return sigma1 * rho1 - sigma2 * rho2; }
    double rho_bar() const { return rho_sigma() / sigma(); }
    double alpha() const { return xi * eta; }
    double kappa_v() const { return xi + Lambda; }           // mean-reversion speed
    double v_mean() const { return xi * eta / (xi + Lambda); }  // long-run level
};

// One marked-Poisson jump component; Y ~ Normal(gamma, delta^2).
struct JumpSpec {
    double lambda_tilde = 0.0;
    double gamma = 0.0;
    double delta = 0.0;

    double kappa_up() const { return std::expm1(gamma + 0.5 * delta * delta); }
    double kappa_down() const { return std::expm1(-gamma + 0.5 * delta * delta); }
    // phi(u) = E[e^{-i u Y}].
    std::complex<double> phi(std::complex<double> u) const {
        const std::complex<double> i(0.0, 1.0);
        return std::exp(-i * u * gamma - 0.5 * u * u * delta * delta);
    }
    // E[e^{s Y}] for complex s.
    std::complex<double> mgf(std::complex<double> s) const {
        return std::exp(s * gamma + 0.5 * s * s * delta * delta);
    }
    bool active() const { return lambda_tilde > 0.0; }
};

struct MarketState {
    double t = 0.0;
    double S1 = 100.0;
    double S2 = 100.0;
    double v = 0.04;

    double s_tilde(const ModelParams& p) const { return S1 * std::exp(p.q1 * t) / (S2 * std::exp(p.q2 * t)); }
    double x(const ModelParams& p) const { return std::log(s_tilde(p)); }
};

struct PhysicalDrifts {
    double mu1 = 0.0, mu2 = 0.0;
    double lambda1 = 0.0, lambda2 = 0.0;
    double kappa1 = 0.0, kappa2 = 0.0;
};

struct Violation {
    std::string name;
    std::string detail;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    bool has(const std::string& name) const;
};

ValidationReport validate_params(const ModelParams& params, const JumpSpec& jump1, const JumpSpec& jump2);
ValidationReport validate_state(const MarketState& state, const ModelParams& params);

struct RiskPremia {
    double psi1, psi2, zeta;
};
RiskPremia risk_premia(const ModelParams& params, const PhysicalDrifts& phys, const JumpSpec& jump1,
                       const JumpSpec& jump2, double v);

// Measure change of one jump component with exponential tilt gamma_tilt and
// intensity log-multiplier nu.
JumpSpec transform_jump_measure(double lambda_p, double gamma_p, double delta_p, double gamma_tilt, double nu);

// lambda_1 kappa_1 + lambda_2 kappa_2^-: the compensator rate of the ratio.
inline double compensator(const JumpSpec& jump1, const JumpSpec& jump2) {
    return jump1.lambda_tilde * jump1.kappa_up() + jump2.lambda_tilde * jump2.kappa_down();
}

}  // namespace exch
