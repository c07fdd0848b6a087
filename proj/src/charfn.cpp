#include "exch/charfn.hpp"

namespace exch {

namespace {
const std::complex<double> I(0.0, 1.0);
}

std::complex<double> f_kernel(double tau, double z, double v, std::complex<double> phi, const ModelParams& p) {
    if (!(z > 0.0) || !(v > 0.0)) throw DomainError("f kernel requires z > 0 and v > 0");
    const AffineBD bd = affine_BD(tau, char_terms_diffusion<double>(-phi, p));
    return f_kernel(z, v, phi, bd);
}

std::complex<double> f1_kernel(double tau, double z, double v, std::complex<double> phi, const ModelParams& p) {
    if (!(z > 0.0) || !(v > 0.0)) throw DomainError("f1 kernel requires z > 0 and v > 0");
    const AffineBD bd = affine_BD(tau, char_terms_diffusion<double>(-(phi - I), p));
    return f_kernel(z, v, phi, bd);
}

std::complex<double> h_kernel(double tau, std::complex<double> phi, double v, double vT, const ModelParams& p) {
    return std::exp(log_h_kernel_t<double>(tau, char_terms_diffusion<double>(phi, p), v, vT));
}

std::complex<double> hbar(double t, double T, std::complex<double> phi, std::complex<double> vartheta, double xT,
                          double vT, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2) {
    const double tau = T - t;
    if (!(tau >= 0.0)) throw DomainError("hbar requires t <= T");
    if (vartheta.real() < 0.0) throw DomainError("hbar requires Re(vartheta) >= 0");
    const double om2 = p.omega * p.omega;
    const double q = 2.0 * p.xi * p.eta / om2 - 1.0;
    if (!(q > 0.0)) throw DomainError("hbar requires 2 alpha / omega^2 - 1 > 0");
    if (tau == 0.0) return std::exp(I * phi * xT - vartheta * vT);

    const CharTerms ct = char_terms(phi, p, j1, j2);
    const std::complex<double> em1 = -expm1_c<double>(-ct.F * tau);
    const std::complex<double> log_c = std::log(2.0 * ct.F) - std::log(om2) - std::log(em1);
    const std::complex<double> log_a = log_c - ct.F * tau;
    const std::complex<double> a = std::exp(log_a);
    const std::complex<double> w = std::exp(log_c) * vT;
    const std::complex<double> s = vartheta - ct.theta_minus_F / om2 + a;
    if (s.real() <= 0.0) throw DomainError("hbar: Laplace variable below the abscissa of convergence");
    const std::complex<double> beta = a * w / s;
    const std::complex<double> log_val = I * phi * xT - ct.iphi_Psi * tau +
                                         ct.theta_minus_F * (ct.alpha * tau - vT) / om2 + ct.F * tau + log_a -
                                         std::log(s) + q * std::log(w) + beta - w + log_gamma_star<double>(q, beta);
    return std::exp(log_val);
}

F2Pair f2_f21_kernels(double tau, double z, double v, std::complex<double> phi, double v_u, const ModelParams& p) {
    if (!(z > 0.0)) throw DomainError("f2 kernel requires z > 0");
    const std::complex<double> lead = I * phi * std::log(z);
    F2Pair out;
    out.f2 = std::exp(lead + log_h_kernel_t<double>(tau, char_terms_diffusion<double>(-phi, p), v, v_u));
    out.f21 = std::exp(lead + log_h_kernel_t<double>(tau, char_terms_diffusion<double>(-(phi - I), p), v, v_u));
    return out;
}

std::complex<double> jump_log_cf(double tau, std::complex<double> phi, const JumpSpec& j1, const JumpSpec& j2) {
    // E[e^{i phi J}] = exp{tau [-i phi comp + l1 (E e^{i phi Y1} - 1) + l2 (E e^{-i phi Y2} - 1)]}
    // = exp{-i(-phi) Psi(-phi) tau} in the e^{-i phi y} convention.
    const CharTerms ct = char_terms(-phi, ModelParams{}, j1, j2);
    return -ct.iphi_Psi * tau;
}

}  // namespace exch
