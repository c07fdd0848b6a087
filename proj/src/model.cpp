#include "exch/model.hpp"

#include "exch/numerics.hpp"

#include <algorithm>
#include <sstream>

namespace exch {

bool ValidationReport::has(const std::string& name) const {
    return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.name == name; });
}

namespace {

std::string fmt(double x) {
    std::ostringstream os;
    os.precision(6);
    os << x;
    return os.str();
}

}  // namespace

ValidationReport validate_params(const ModelParams& p, const JumpSpec& jump1, const JumpSpec& jump2) {
    ValidationReport rep;
    auto add = [&](std::string name, std::string detail) { rep.violations.push_back({std::move(name), std::move(detail)}); };

    const double fields[] = {p.sigma1, p.sigma2, p.rho_w, p.rho1, p.rho2, p.xi, p.eta, p.omega, p.Lambda,
                             p.q1, p.q2, p.r, p.T, jump1.lambda_tilde, jump1.gamma, jump1.delta,
                             jump2.lambda_tilde, jump2.gamma, jump2.delta};
    for (double f : fields) {
        if (!std::isfinite(f)) {
            add("finite", "all parameters must be finite");
            return rep;
        }
    }
    if (!(p.sigma1 > 0.0)) add("sigma1", "sigma1 must be > 0");
    if (!(p.sigma2 > 0.0)) add("sigma2", "sigma2 must be > 0");
    for (auto [name, rho] : {std::pair{"rho_w", p.rho_w}, std::pair{"rho1", p.rho1}, std::pair{"rho2", p.rho2}}) {
        if (!(rho > -1.0 && rho < 1.0)) add("correlation range", std::string(name) + " must lie in (-1, 1)");
    }
    if (!(p.xi > 0.0)) add("xi", "xi must be > 0");
    if (!(p.eta > 0.0)) add("eta", "eta must be > 0");
    if (!(p.omega > 0.0)) add("omega", "omega must be > 0");
    if (!(p.Lambda >= 0.0)) add("Lambda", "Lambda must be >= 0");
    if (!(p.q1 >= 0.0)) add("q1", "q1 must be >= 0");
    if (!(p.q2 >= 0.0)) add("q2", "q2 must be >= 0");
    if (!(p.r >= 0.0)) add("r", "r must be >= 0");
    if (!(p.T > 0.0)) add("T", "T must be > 0");
    if (p.xi > 0.0 && p.eta > 0.0 && p.omega > 0.0) {
        if (2.0 * p.xi * p.eta < p.omega * p.omega) {
            add("Feller", "2 xi eta = " + fmt(2.0 * p.xi * p.eta) + " < omega^2 = " + fmt(p.omega * p.omega));
        }
        const double bound = std::min(p.xi / p.omega, 1.0);
        if (!(p.rho1 < bound)) add("rho bound", "rho1 = " + fmt(p.rho1) + " >= min(xi/omega, 1) = " + fmt(bound));
        if (!(p.rho2 < bound)) add("rho bound", "rho2 = " + fmt(p.rho2) + " >= min(xi/omega, 1) = " + fmt(bound));
    }
    const double s2 = p.sigma1 * p.sigma1 + p.sigma2 * p.sigma2 - 2.0 * p.rho_w * p.sigma1 * p.sigma2;
    if (!(s2 > 0.0)) {
        add("sigma", "composite volatility must be > 0");
    } else {
        const double rb = p.rho_sigma() / std::sqrt(s2);
        if (!(rb >= -1.0 && rb <= 1.0)) add("rho_bar", "effective correlation " + fmt(rb) + " outside [-1, 1]");
    }
    for (auto [name, j] : {std::pair{"jump1", &jump1}, std::pair{"jump2", &jump2}}) {
        if (!(j->lambda_tilde >= 0.0)) add("jump intensity", std::string(name) + ".lambda_tilde must be >= 0");
        if (!(j->delta >= 0.0)) add("jump delta", std::string(name) + ".delta must be >= 0");
    }
    return rep;
}

ValidationReport validate_state(const MarketState& s, const ModelParams& p) {
    ValidationReport rep;
    if (!(s.S1 > 0.0) || !std::isfinite(s.S1)) rep.violations.push_back({"S1", "S1 must be > 0"});
    if (!(s.S2 > 0.0) || !std::isfinite(s.S2)) rep.violations.push_back({"S2", "S2 must be > 0"});
    if (!(s.v > 0.0) || !std::isfinite(s.v)) rep.violations.push_back({"v", "variance must be > 0"});
    if (!(s.t >= 0.0 && s.t < p.T)) rep.violations.push_back({"t", "valuation time must lie in [0, T)"});
    return rep;
}

RiskPremia risk_premia(const ModelParams& p, const PhysicalDrifts& phys, const JumpSpec& jump1, const JumpSpec& jump2,
                       double v) {
    if (!(v > 0.0)) throw DomainError("risk premia require v > 0");
    const double sv = std::sqrt(v);
    RiskPremia out;
    out.psi1 = (phys.mu1 + p.q1 - p.r - p.rho_w * p.sigma1 * p.sigma1 * v - phys.lambda1 * phys.kappa1 +
                jump1.lambda_tilde * jump1.kappa_up()) /
               (p.sigma1 * sv);
    out.psi2 = (phys.mu2 + p.q2 - p.r - p.sigma2 * p.sigma2 * v - phys.lambda2 * phys.kappa2 -
                jump2.lambda_tilde * jump2.kappa_down()) /
               (p.sigma2 * sv);
    out.zeta = p.Lambda / p.omega * sv;
    return out;
}

JumpSpec transform_jump_measure(double lambda_p, double gamma_p, double delta_p, double gamma_tilt, double nu) {
    if (lambda_p < 0.0 || delta_p < 0.0) throw DomainError("jump intensity and delta must be >= 0");
    JumpSpec out;
    const double d2 = delta_p * delta_p;
    out.lambda_tilde = lambda_p * std::exp(nu + gamma_tilt * gamma_p + 0.5 * gamma_tilt * gamma_tilt * d2);
    out.gamma = gamma_p + gamma_tilt * d2;
    out.delta = delta_p;
    return out;
}

}  // namespace exch
