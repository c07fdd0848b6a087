#pragma once

#include "exch/model.hpp"

#include <optional>

namespace exch {

struct BoundaryLimitResult {
    double b_limit = 1.0;
    std::optional<double> x_star;     // empty: no root (early exercise never optimal)
    bool continuous_at_maturity = true;
    bool never_optimal = false;
    double f_at_one = 0.0;
};

// The maturity-limit function whose zero gives the critical ratio B(T-, v).
double boundary_f(double x, double q1, double q2, const JumpSpec& jump1, const JumpSpec& jump2);

BoundaryLimitResult boundary_limit(double q1, double q2, const JumpSpec& jump1, const JumpSpec& jump2,
                                   double tol = 1e-14);

bool continuity_condition(double q1, double q2, const JumpSpec& jump1, const JumpSpec& jump2);

// Partial integrals of the lognormal mark density G(y) = N(gamma, delta^2):
//   lower_mass(a)   = int_{-inf}^{a} G,      lower_exp(a)  = int_{-inf}^{a} e^{y} G,
//   upper_mass(a)   = int_{a}^{inf} G,       upper_nexp(a) = int_{a}^{inf} e^{-y} G.
double jump_lower_mass(const JumpSpec& j, double a);
double jump_lower_exp(const JumpSpec& j, double a);
double jump_upper_mass(const JumpSpec& j, double a);
double jump_upper_nexp(const JumpSpec& j, double a);

}  // namespace exch
