#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace exch {

// Raised when a quadrature, series or special-function evaluation cannot
// reach its tolerance; `achieved` carries the best error bound obtained.
class NumericsError : public std::runtime_error {
public:
    NumericsError(const std::string& what, double achieved = std::numeric_limits<double>::quiet_NaN())
        : std::runtime_error(what), achieved_(achieved) {}
    double achieved() const { return achieved_; }

private:
    double achieved_;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

struct QuadSpec {
    double phi_max = 1e5;         // hard truncation bound of the half-line
    int panels = 8;                // initial panel count on [0, phi_cut]
    int points_per_panel = 16;     // Gauss-Legendre order per panel
    double abs_tol = 1e-10;
    double rel_tol = 1e-10;
    int hermite_order = 24;
    double poisson_tail_mass = 1e-12;
    double envelope_tol = 1e-12;   // integrand magnitude defining phi_cut
};

// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
struct Rule {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
};
const Rule& gauss_legendre(int n);

// Gauss-Hermite rule for expectations under N(0,1): E[g(Z)] ~ sum w_k g(x_k).
const Rule& gauss_hermite_normal(int n);

struct HalfLineResult {
    double value = 0.0;
    double error_estimate = 0.0;
    double imag_residue = 0.0;
    double phi_cut = 0.0;
    int evaluations = 0;
};

// Adaptive composite Gauss-Legendre integral of Re g over [0, inf). The range
// is cut where |g| stays below spec.envelope_tol; throws if that never
// happens before spec.phi_max.
HalfLineResult fourier_half_line(const std::function<std::complex<double>(double)>& g,
                                 const QuadSpec& spec);

// Composite Gauss-Legendre over [a, b] with `panels` equal panels.
template <class F>
double integrate_gl(F&& f, double a, double b, int panels = 16, int order = 16) {
    const Rule& r = gauss_legendre(order);
    const double h = (b - a) / panels;
    double sum = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double mid = a + (p + 0.5) * h;
        for (int k = 0; k < r.nodes.size(); ++k)
            sum += r.weights[k] * f(mid + 0.5 * h * r.nodes[k]);
    }
    return 0.5 * h * sum;
}

// ---------------------------------------------------------------------------
// Special functions.

// log of I_nu(z) for nu >= 0, principal branch (the (z/2)^nu factor uses the
// principal power). Templated on the real scalar.
template <class S>
std::complex<S> log_bessel_i(S nu, std::complex<S> z);

// log of I_nu(z) / (z/2)^nu = sum_n (z^2/4)^n / (n! Gamma(n+nu+1)); entire in
// y = z^2/4 and therefore free of branch choices.
template <class S>
std::complex<S> log_bessel_i_reduced(S nu, std::complex<S> y);

struct BesselScaled {
    double log_magnitude;   // log|I_nu(z)| - |Re z|
    double phase;           // arg I_nu(z) in (-pi, pi]
};
BesselScaled bessel_i_complex(double nu, std::complex<double> z);

// Tricomi's entire function gamma*(u, b) = b^{-u} P(u, b) = e^{-b} sum_n b^n / Gamma(u+n+1).
template <class S>
std::complex<S> log_gamma_star(S u, std::complex<S> b);

// Normalized lower incomplete gamma P(u, b) along the straight ray [0, b].
std::complex<double> lower_incomplete_gamma(double u, std::complex<double> b);

// ---------------------------------------------------------------------------
// Series, roots, distributions.

struct PoissonSeries {
    int max_order = 0;
    Eigen::VectorXd weights;   // weights[k] = e^{-rate} rate^k / k!, k = 0..max_order
    double mass() const { return weights.sum(); }
};
PoissonSeries poisson_truncation(double rate, double tail_mass);

class BracketError : public NumericsError {
public:
    using NumericsError::NumericsError;
};

// Brent-Dekker root of f on [lo, hi]; requires f(lo) f(hi) <= 0.
double brent_root(const std::function<double(double)>& f, double lo, double hi, double tol,
                  int max_iter = 200);

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

// log(1 + w) accurate for small |w|.
template <class S>
std::complex<S> log1p_c(std::complex<S> w) {
    if (std::abs(w) < S(1e-4)) {
        return w * (S(1) - w * (S(0.5) - w * (S(1) / S(3) - w * S(0.25))));
    }
    return std::log(S(1) + w);
}

}  // namespace exch

#include "exch/detail/special_functions.hpp"
