#pragma once

#include "exch/model.hpp"

#include <cmath>

namespace oracle {

// Noncentral chi-square CIR transition density as a Poisson mixture of gamma
// densities (no Bessel function involved).
inline double cir_density(const exch::ModelParams& p, double tau, double v, double vT) {
    const double k = p.xi + p.Lambda, om2 = p.omega * p.omega;
    const double c = 2.0 * k / (om2 * (1.0 - std::exp(-k * tau)));
    const double lam = c * v * std::exp(-k * tau);   // half the noncentrality
    const double q = 2.0 * p.xi * p.eta / om2 - 1.0;
    const double w = c * vT;
    double sum = 0.0;
    for (int j = 0; j < 400; ++j) {
        const double lp = -lam + j * std::log(lam) - std::lgamma(j + 1.0);
        const double lg = (q + j) * std::log(w) - w - std::lgamma(q + j + 1.0);
        sum += std::exp(lp + lg);
    }
    return c * sum;
}

}  // namespace oracle
