#include "exch/boundary.hpp"

#include "exch/numerics.hpp"

#include <cmath>

namespace exch {

double jump_lower_mass(const JumpSpec& j, double a) {
    if (j.delta == 0.0) return j.gamma <= a ? 1.0 : 0.0;
    return normal_cdf((a - j.gamma) / j.delta);
}

double jump_lower_exp(const JumpSpec& j, double a) {
    if (j.delta == 0.0) return j.gamma <= a ? std::exp(j.gamma) : 0.0;
    return std::exp(j.gamma + 0.5 * j.delta * j.delta) * normal_cdf((a - j.gamma - j.delta * j.delta) / j.delta);
}

double jump_upper_mass(const JumpSpec& j, double a) {
    if (j.delta == 0.0) return j.gamma > a ? 1.0 : 0.0;
    return normal_cdf((j.gamma - a) / j.delta);
}

double jump_upper_nexp(const JumpSpec& j, double a) {
    if (j.delta == 0.0) return j.gamma > a ? std::exp(-j.gamma) : 0.0;
    return std::exp(-j.gamma + 0.5 * j.delta * j.delta) * normal_cdf((j.gamma - j.delta * j.delta - a) / j.delta);
}

double boundary_f(double x, double q1, double q2, const JumpSpec& j1, const JumpSpec& j2) {
    if (!(x > 0.0)) throw DomainError("boundary_f requires x > 0");
    const double lx = std::log(x);
    const double l1 = j1.lambda_tilde, l2 = j2.lambda_tilde;
    const double constant = q2 + l1 * jump_lower_mass(j1, -lx) + l2 * jump_upper_mass(j2, lx);
    const double slope = q1 + l1 * jump_lower_exp(j1, -lx) + l2 * jump_upper_nexp(j2, lx);
    return constant - x * slope;
}

bool continuity_condition(double q1, double q2, const JumpSpec& j1, const JumpSpec& j2) {
    if (!(q1 > 0.0)) throw DomainError("continuity condition requires q1 > 0");
    // int_{-inf}^0 (1 - e^y) G1 and int_0^inf (1 - e^{-y}) G2.
    const double c1 = jump_lower_mass(j1, 0.0) - jump_lower_exp(j1, 0.0);
    const double c2 = jump_upper_mass(j2, 0.0) - jump_upper_nexp(j2, 0.0);
    return q1 >= q2 + j1.lambda_tilde * c1 + j2.lambda_tilde * c2;
}

BoundaryLimitResult boundary_limit(double q1, double q2, const JumpSpec& j1, const JumpSpec& j2, double tol) {
    if (q1 < 0.0 || q2 < 0.0) throw DomainError("dividend yields must be >= 0");
    BoundaryLimitResult res;
    if (q1 == 0.0) {
        if (q2 == 0.0 && !j1.active() && !j2.active()) {
            throw DomainError("degenerate input: q1 = q2 = 0 without jumps");
        }
        res.never_optimal = true;
        res.continuous_at_maturity = false;
        res.b_limit = std::numeric_limits<double>::infinity();
        res.f_at_one = boundary_f(1.0, q1, q2, j1, j2);
        return res;
    }
    const auto f = [&](double x) { return boundary_f(x, q1, q2, j1, j2); };
    res.f_at_one = f(1.0);
    // f(0+) > 0 and f is strictly decreasing; expand geometrically to bracket.
    double lo = 1.0, hi = 1.0;
    while (f(lo) <= 0.0) {
        hi = lo;
        lo *= 0.5;
        if (lo < 1e-300) throw NumericsError("boundary limit: no positive bracket end");
    }
    while (f(hi) > 0.0) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e300) throw NumericsError("boundary limit: no negative bracket end");
    }
    const double root = brent_root(f, lo, hi, tol, 500);
    res.x_star = root;
    res.b_limit = std::max(1.0, root);
    res.continuous_at_maturity = continuity_condition(q1, q2, j1, j2);
    return res;
}

}  // namespace exch
