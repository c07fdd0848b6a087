#pragma once

// Template definitions for the complex special functions declared in
// exch/numerics.hpp. The modified Bessel function switches between the power
// series, the large-argument Hankel expansion, the uniform (Debye) expansion
// and, as a last resort, Miller's backward recurrence started from the Debye
// form at high order, which is accurate anywhere in the right half-plane.

#include <array>
#include <limits>
#include <cmath>
#include <complex>
#include <vector>

namespace exch {
namespace detail {

template <class S>
constexpr S pi_v = S(3.141592653589793238462643383279502884L);

// Polynomials U_k(p) of the uniform expansion, built once by the recurrence
// U_{k+1} = p^2 (1 - p^2) U_k' / 2 + (1/8) int_0^p (1 - 5 t^2) U_k(t) dt.
inline const std::vector<std::vector<long double>>& debye_polynomials() {
    static const std::vector<std::vector<long double>> table = [] {
        constexpr int kMax = 14;
        std::vector<std::vector<long double>> u(kMax + 1);
        u[0] = {1.0L};
        for (int k = 0; k < kMax; ++k) {
            const auto& c = u[k];
            std::vector<long double> next(c.size() + 3, 0.0L);
            for (std::size_t j = 1; j < c.size(); ++j) {
                const long double d = j * c[j];   // coefficient of p^{j-1} in U_k'
                next[j + 1] += 0.5L * d;
                next[j + 3] -= 0.5L * d;
            }
            for (std::size_t j = 0; j < c.size(); ++j) {
                next[j + 1] += c[j] / (8.0L * (j + 1));
                next[j + 3] -= 5.0L * c[j] / (8.0L * (j + 3));
            }
            u[k + 1] = next;
        }
        return u;
    }();
    return table;
}

template <class S>
std::complex<S> poly_eval(const std::vector<long double>& c, std::complex<S> p) {
    std::complex<S> acc(0);
    for (std::size_t j = c.size(); j-- > 0;) acc = acc * p + S(c[j]);
    return acc;
}

// Power series of log(I_nu(z)/(z/2)^nu * Gamma(nu+1)) in y = z^2/4,
// accumulated in long double.
template <class S>
std::complex<S> log_reduced_series(S nu, std::complex<S> y) {
    using L = long double;
    const std::complex<L> yl(static_cast<L>(y.real()), static_cast<L>(y.imag()));
    std::complex<L> term(1.0L), sum(1.0L);
    const L nul = static_cast<L>(nu);
    const L ay = std::abs(yl);
    for (int n = 1; n < 100000; ++n) {
        term *= yl / (L(n) * (L(n) + nul));
        sum += term;
        // Squared magnitudes avoid a long-double hypot per term.
        if (std::norm(term) < 1e-42L * std::norm(sum) && L(n) * (L(n) + nul) > 2.0L * ay) break;
    }
    const std::complex<L> lg = std::log(sum);
    return {static_cast<S>(lg.real()), static_cast<S>(lg.imag())};
}

// Hankel expansion with both exponentials; returns false when the
// asymptotic series does not reach full precision before diverging.
template <class S>
bool log_bessel_hankel(S nu, std::complex<S> z, std::complex<S>& out) {
    const S mu = S(4) * nu * nu;
    std::complex<S> s1(1), s2(1), t(1);
    S prev = std::numeric_limits<S>::infinity();
    bool ok = false;
    for (int k = 1; k < 200; ++k) {
        const S odd = S(2 * k - 1);
        t *= (mu - odd * odd) / (S(k) * S(8) * z);
        const S mag = std::abs(t);
        if (mag > prev) break;
        prev = mag;
        s1 += (k % 2 ? -t : t);
        s2 += t;
        if (mag < S(1e-17)) {
            ok = true;
            break;
        }
    }
    if (!ok) return false;
    const std::complex<S> i(0, 1);
    const S sgn = z.imag() >= S(0) ? S(1) : S(-1);
    const std::complex<S> rec = sgn * i * std::exp(sgn * i * pi_v<S> * nu) * std::exp(S(-2) * z) * s2;
    out = z - S(0.5) * std::log(S(2) * pi_v<S> * z) + std::log(s1 + rec);
    return true;
}

// Uniform expansion of I_nu(nu w); `err` receives the size of the last term.
template <class S>
std::complex<S> log_bessel_debye(S nu, std::complex<S> z, S& err) {
    const std::complex<S> w = z / nu;
    const std::complex<S> sq = std::sqrt(S(1) + w * w);
    const std::complex<S> eta = sq + std::log(w / (S(1) + sq));
    const std::complex<S> p = S(1) / sq;
    const auto& u = debye_polynomials();
    std::complex<S> sum(1);
    S nuk = 1;
    err = 0;
    for (std::size_t k = 1; k < u.size(); ++k) {
        nuk *= nu;
        const std::complex<S> term = poly_eval(u[k], p) / nuk;
        sum += term;
        err = std::abs(term);
        if (err < S(1e-17)) break;
    }
    return nu * eta - S(0.5) * std::log(S(2) * pi_v<S> * nu) - S(0.25) * std::log(S(1) + w * w) +
           std::log(sum);
}

// Miller's backward recurrence I_{m-1} = (2m/z) I_m + I_{m+1}, started from
// the Debye form at an order well above |z| where it is essentially exact.
template <class S>
std::complex<S> log_bessel_miller(S nu, std::complex<S> z) {
    const S az = std::abs(z);
    const int n = static_cast<int>(std::ceil(S(2) * az + S(30)));
    S e1 = 0, e2 = 0;
    const std::complex<S> l_top = log_bessel_debye(nu + S(n), z, e1);
    const std::complex<S> l_top1 = log_bessel_debye(nu + S(n + 1), z, e2);
    // Work with ratios scaled by exp(l_top) to avoid overflow.
    std::complex<S> hi = std::exp(l_top1 - l_top);   // I_{nu+n+1} / I_{nu+n}
    std::complex<S> cur(1);                          // I_{nu+n}   / I_{nu+n}
    S log_scale = 0;
    for (int m = n; m >= 1; --m) {
        const S order = nu + S(m);
        const std::complex<S> lower = (S(2) * order / z) * cur + hi;
        hi = cur;
        cur = lower;
        const S mag = std::abs(cur);
        if (mag > S(1e200)) {
            cur /= mag;
            hi /= mag;
            log_scale += std::log(mag);
        }
    }
    return l_top + log_scale + std::log(cur);
}

template <class S>
std::complex<S> log_bessel_i_right(S nu, std::complex<S> z) {
    const S az = std::abs(z);
    const S near_real_loss = az - z.real();
    if (az <= S(17) || (near_real_loss <= S(20) && az <= S(400))) {
        const std::complex<S> y = z * z / S(4);
        return nu * std::log(z / S(2)) - std::lgamma(nu + S(1)) + log_reduced_series(nu, y);
    }
    std::complex<S> out;
    if (log_bessel_hankel(nu, z, out)) return out;
    if (nu >= S(5)) {
        const std::complex<S> w = z / nu;
        const std::complex<S> sq = std::sqrt(S(1) + w * w);
        const std::complex<S> eta = sq + std::log(w / (S(1) + sq));
        S err = 0;
        const bool inside_eye = std::abs(w) <= S(0.9);
        if (inside_eye || nu * eta.real() >= S(20)) {
            out = log_bessel_debye(nu, z, err);
            if (err < S(1e-15)) return out;
        }
    }
    return log_bessel_miller(nu, z);
}

}  // namespace detail

template <class S>
std::complex<S> log_bessel_i(S nu, std::complex<S> z) {
    if (z == std::complex<S>(0)) {
        if (nu == S(0)) return {0, 0};
        return {-std::numeric_limits<S>::infinity(), 0};
    }
    if (z.real() >= S(0)) return detail::log_bessel_i_right(nu, z);
    // I_nu(z e^{+-i pi}) = e^{+-i nu pi} I_nu(z), keeping arg in (-pi, pi].
    const S sgn = z.imag() >= S(0) ? S(1) : S(-1);
    return detail::log_bessel_i_right(nu, -z) + std::complex<S>(0, sgn * nu * detail::pi_v<S>);
}

template <class S>
std::complex<S> log_bessel_i_reduced(S nu, std::complex<S> y) {
    // y = z^2/4; pick z = 2 sqrt(y) in the right half-plane.
    if (std::abs(y) <= S(17 * 17) / S(4)) {
        return detail::log_reduced_series(nu, y) - std::lgamma(nu + S(1));
    }
    const std::complex<S> z = S(2) * std::sqrt(y);
    return detail::log_bessel_i_right(nu, z) - nu * std::log(z / S(2));
}

template <class S>
std::complex<S> log_gamma_star(S u, std::complex<S> b) {
    using L = long double;
    const S ab = std::abs(b);
    if (ab <= S(25) + u) {
        const std::complex<L> bl(static_cast<L>(b.real()), static_cast<L>(b.imag()));
        const L ul = static_cast<L>(u);
        std::complex<L> term(1.0L), sum(1.0L);
        for (int n = 1; n < 100000; ++n) {
            term *= bl / (ul + L(n));
            sum += term;
            if (std::abs(term) < 1e-21L * std::abs(sum) && L(n) + ul > 2.0L * std::abs(bl)) break;
        }
        const std::complex<L> l = -bl + std::log(sum) - std::lgamma(ul + 1.0L);
        return {static_cast<S>(l.real()), static_cast<S>(l.imag())};
    }
    // Continued fraction (modified Lentz) for the upper function
    // Gamma(u, b) = e^{-b} b^u / (b + 1 - u - 1(1-u)/(b + 3 - u - ...)).
    const S tiny = S(1e-300);
    std::complex<S> bb = b + S(1) - u;
    std::complex<S> c = S(1) / tiny;
    std::complex<S> d = S(1) / bb;
    std::complex<S> h = d;
    bool converged = false;
    for (int i = 1; i < 100000; ++i) {
        const S an = -S(i) * (S(i) - u);
        bb += S(2);
        d = an * d + bb;
        if (std::abs(d) < tiny) d = tiny;
        c = bb + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = S(1) / d;
        const std::complex<S> del = d * c;
        h *= del;
        if (std::abs(del - S(1)) < S(1e-16)) {
            converged = true;
            break;
        }
    }
    if (!converged) throw NumericsError("incomplete gamma continued fraction did not converge");
    // Q = Gamma(u,b)/Gamma(u); gamma* = b^{-u} (1 - Q).
    const std::complex<S> log_q = -b + u * std::log(b) + std::log(h) - std::lgamma(u);
    const std::complex<S> one_minus_q = S(1) - std::exp(log_q);
    return -u * std::log(b) + std::log(one_minus_q);
}

}  // namespace exch
