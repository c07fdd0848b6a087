#pragma once

// Transform-domain building blocks. Conventions: for a transform variable phi
// the affine exponents B(tau, phi), D(tau, phi) describe E[exp(-i phi X_c)]
// of the diffusive log-ratio increment X_c, so that the forward kernel
// f(phi) = E[exp(i phi X_T)] uses B(tau, -phi), D(tau, -phi).

#include "exch/model.hpp"
#include "exch/numerics.hpp"

#include <complex>

namespace exch {

template <class S>
struct CharTermsT {
    using C = std::complex<S>;
    C phi;
    S alpha = 0;
    C Theta, eps, Psi, iphi_Psi;   // iphi_Psi = i phi Psi(phi), regular at phi = 0
    C F, chi;
    C g;                           // 1 / chi = (Theta - F) / (Theta + F)
    C theta_minus_F;               // Theta - F computed without cancellation
    S omega = 0;
};
using CharTerms = CharTermsT<double>;

template <class S>
struct AffineBDT {
    std::complex<S> B, D;
};
using AffineBD = AffineBDT<double>;

// Diffusion-only terms (no jump contribution in Psi).
template <class S>
CharTermsT<S> char_terms_diffusion(std::complex<S> phi, const ModelParams& p) {
    using C = std::complex<S>;
    const C i(0, 1);
    CharTermsT<S> t;
    t.phi = phi;
    t.alpha = S(p.xi) * S(p.eta);
    t.omega = S(p.omega);
    const S om2 = t.omega * t.omega;
    const S sig2 = S(p.sigma1) * S(p.sigma1) + S(p.sigma2) * S(p.sigma2) - S(2) * S(p.rho_w) * S(p.sigma1) * S(p.sigma2);
    t.Theta = S(p.xi) + S(p.Lambda) + i * phi * t.omega * (S(p.sigma1) * S(p.rho1) - S(p.sigma2) * S(p.rho2));
    t.eps = sig2 * (i * phi - phi * phi);
    t.F = std::sqrt(t.Theta * t.Theta - om2 * t.eps);
    if (t.F.real() < S(0)) t.F = -t.F;
    C plus = t.Theta + t.F;
    C minus = t.Theta - t.F;
    // Theta^2 - F^2 = omega^2 eps; form the smaller of Theta +- F from the larger.
    if (std::abs(plus) >= std::abs(minus)) {
        minus = om2 * t.eps / plus;
    } else {
        plus = om2 * t.eps / minus;
    }
    t.theta_minus_F = minus;
    t.g = minus / plus;
    t.chi = (minus == C(0)) ? C(std::numeric_limits<S>::infinity(), 0) : plus / minus;
    t.Psi = C(0);
    t.iphi_Psi = C(0);
    return t;
}

template <class S>
CharTermsT<S> char_terms_t(std::complex<S> phi, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2) {
    using C = std::complex<S>;
    const C i(0, 1);
    CharTermsT<S> t = char_terms_diffusion<S>(phi, p);
    const S l1 = S(j1.lambda_tilde), l2 = S(j2.lambda_tilde);
    const S comp = S(compensator(j1, j2));
    auto phi_j = [&](const JumpSpec& j, C u) {
        return std::exp(-i * u * S(j.gamma) - u * u * S(j.delta) * S(j.delta) / S(2));
    };
    auto phi_j_m1 = [&](const JumpSpec& j, C u) {
        // phi_j(u) - 1 without cancellation for small |u|.
        const C w = -i * u * S(j.gamma) - u * u * S(j.delta) * S(j.delta) / S(2);
        if (std::abs(w) < S(1e-5)) return w * (S(1) + w / S(2) + w * w / S(6));
        return phi_j(j, u) - S(1);
    };
    t.iphi_Psi = -i * phi * comp - l1 * phi_j_m1(j1, phi) - l2 * phi_j_m1(j2, -phi);
    if (std::abs(phi) > S(0)) {
        t.Psi = t.iphi_Psi / (i * phi);
    } else {
        t.Psi = -comp + l1 * S(j1.gamma) - l2 * S(j2.gamma);
    }
    return t;
}

inline CharTerms char_terms(std::complex<double> phi, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2) {
    return char_terms_t<double>(phi, p, j1, j2);
}

template <class S>
std::complex<S> expm1_c(std::complex<S> x) {
    if (std::abs(x) < S(1e-3)) {
        return x * (S(1) + x / S(2) * (S(1) + x / S(3) * (S(1) + x / S(4) * (S(1) + x / S(5)))));
    }
    return std::exp(x) - S(1);
}

// Affine exponents in the numerically stable arrangement
//   D = (Theta - F)/omega^2 (1 - e^{-F tau}) / (1 - g e^{-F tau})
//   B = alpha/omega^2 [(Theta - F) tau - 2 log((1 - g e^{-F tau}) / (1 - g))]
// which equals the textbook form with chi = 1/g but keeps every exponential
// bounded, so the logarithm never crosses a branch cut as tau increases.
template <class S>
AffineBDT<S> affine_BD_t(S tau, const CharTermsT<S>& t) {
    using C = std::complex<S>;
    if (tau < S(0)) throw DomainError("affine exponents require tau >= 0");
    if (tau == S(0)) return {C(0), C(0)};
    const S om2 = t.omega * t.omega;
    if (t.theta_minus_F == C(0)) return {C(0), C(0)};
    const C one_minus_g = S(1) - t.g;
    if (std::abs(one_minus_g) < S(1e-13) * (S(1) + std::abs(t.g)) || std::abs(t.F) < S(1e-300)) {
        throw DomainError("degenerate transform parameters: 1 - chi vanishes");
    }
    const C em1 = -expm1_c<S>(-t.F * tau);   // 1 - e^{-F tau}
    const C e = std::exp(-t.F * tau);
    const C den = S(1) - t.g * e;
    AffineBDT<S> out;
    out.D = t.theta_minus_F / om2 * em1 / den;
    const C ratio_m1 = t.g * em1 / one_minus_g;   // (1 - g e)/(1 - g) - 1
    out.B = t.alpha / om2 * (t.theta_minus_F * tau - S(2) * log1p_c<S>(ratio_m1));
    return out;
}

inline AffineBD affine_BD(double tau, const CharTerms& t) { return affine_BD_t<double>(tau, t); }

// f(tau, z, v; phi) = exp{i phi ln z + B(tau, -phi) + D(tau, -phi) v}.
std::complex<double> f_kernel(double tau, double z, double v, std::complex<double> phi, const ModelParams& p);
// Same, from precomputed exponents at -phi.
inline std::complex<double> f_kernel(double z, double v, std::complex<double> phi, const AffineBD& bd_minus) {
    const std::complex<double> i(0.0, 1.0);
    return std::exp(i * phi * std::log(z) + bd_minus.B + bd_minus.D * v);
}

// f1(tau, z, v; phi) = f(tau, z, v; phi - i) / z, the share-measure kernel.
std::complex<double> f1_kernel(double tau, double z, double v, std::complex<double> phi, const ModelParams& p);

// Log of h(tau, phi, v; v_T): the v_T-resolved transform E[exp(-i phi X_c); v_T in dv_T]/dv_T.
template <class S>
std::complex<S> log_h_kernel_t(S tau, const CharTermsT<S>& t, S v, S vT) {
    using C = std::complex<S>;
    if (!(tau > S(0)) || !(v > S(0)) || !(vT > S(0))) throw DomainError("h kernel requires tau, v, v_T > 0");
    const S om2 = t.omega * t.omega;
    const S q = S(2) * t.alpha / om2 - S(1);
    const C em1 = -expm1_c<S>(-t.F * tau);
    const C log_c = std::log(S(2) * t.F) - std::log(om2) - std::log(em1);
    const C c = std::exp(log_c);
    const C u = c * std::exp(-t.F * tau) * v;
    const C w = c * vT;
    return t.theta_minus_F * (v - vT + t.alpha * tau) / om2 + log_c - u - w + q * std::log(w) +
           log_bessel_i_reduced<S>(q, u * w);
}

std::complex<double> h_kernel(double tau, std::complex<double> phi, double v, double vT, const ModelParams& p);

// Laplace transform in the initial variance of exp{i phi x_T - i phi Psi tau} h(tau, phi, v; v_T).
std::complex<double> hbar(double t, double T, std::complex<double> phi, std::complex<double> vartheta, double xT,
                          double vT, const ModelParams& p, const JumpSpec& j1, const JumpSpec& j2);

struct F2Pair {
    std::complex<double> f2, f21;
};
F2Pair f2_f21_kernels(double tau, double z, double v, std::complex<double> phi, double v_u, const ModelParams& p);

// log E[exp(i phi J_tau)] for the compensated compound-Poisson part of the
// log-ratio over tau (jump-1 marks enter with +, jump-2 marks with -).
std::complex<double> jump_log_cf(double tau, std::complex<double> phi, const JumpSpec& j1, const JumpSpec& j2);

}  // namespace exch
