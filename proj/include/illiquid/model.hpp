#pragma once

// Market/preference parameters, the constants derived from them, and the
// closed-form baselines (Merton values, the all-liquid coefficient K0).
//
// Value normalization: the HJB machinery uses U(c) = c^p / p.  Reported
// V(1) values and the Merton formula below are on the U(c) = c^p scale,
// which is exactly p times the HJB scale (values are linear in U).  Helpers
// `reported_value` / `hjb_value` convert between the two.

#include <cmath>
#include <string>

namespace illiquid {

struct ModelParams {
    double b_L = 0.15;     // liquid drift
    double sigma_L = 1.0;  // liquid volatility
    double b_I = 0.2;      // illiquid drift
    double sigma_I = 1.0;  // illiquid volatility
    double rho = 0.0;      // correlation
    double beta = 0.2;     // discount rate
    double p = 0.5;        // utility exponent, U(c) = c^p / p
    double lambda = 1.0;   // Poisson trading intensity
    double gamma = 0.0;    // observation parameter
    // false: the agent holds cash and the illiquid asset only (no continuously
    // traded risky asset).  Requires rho == 0.
    bool liquid_asset = true;

    /// Reference parameter block used throughout the experiments.
    static ModelParams reference() { return {}; }
};

struct DerivedConstants {
    double k_p = 0;
    double b_Y = 0;
    double b_J = 0;
    double sigma_J = 0;
    double k_LYp = 0;
    double k_Jp = 0;
    double K_lambda = 0;
    double K1 = 0;
    double K2 = 0;
    double K3 = 0;
    double K4 = 0;
    double Khat1 = 0;
    double Khat3 = 0;
    /// Growth rate of E[J_t^p]: p b_J - p(1-p) sigma_J^2 / 2.
    double m_J = 0;
    /// Total volatility of the observed proxy: sigma_I^2 (rho^2 + gamma^2 (1-rho^2)).
    double var_Y = 0;
    /// Linear coefficient of the all-liquid equation at zhat = 1.
    double k0_a = 0;
    /// rho sigma_I / sigma_L: liquid position that offsets the observed illiquid noise.
    double hedge_ratio = 0;
    double p = 0.5;
    double lambda = 0;
    bool liquid_asset = true;
};

struct SplitConstants {
    double b_Y;
    double b_J;
    double sigma_J;
    double k_LYp;
    double k_Jp;
};

/// Throws ValidationError on any violated invariant, including beta <= k_p.
void validate(const ModelParams& params);

/// sup over u_L in R, u_I in [0,1] of the liquid Merton growth functional.
double compute_kp(const ModelParams& params);

/// Same functional with u_I unconstrained; +inf when unbounded.
double compute_kp_unconstrained(const ModelParams& params);

/// Maximizing illiquid proportion of the constrained problem.
double merton_illiquid_share(const ModelParams& params, bool constrained = true);

/// Maximizing liquid proportion of the constrained problem.
double merton_liquid_share(const ModelParams& params, bool constrained = true);

SplitConstants split_constants(const ModelParams& params);

/// Validates `params` and evaluates every constant of the reduced HJB.
DerivedConstants hjb_constants(const ModelParams& params);

/// Per-unit-wealth Merton value ((1-p)/(beta-k))^{1-p} on the reported scale.
/// Returns +inf when beta <= k.
double merton_value(const ModelParams& params, bool constrained);

/// Merton consumption per unit wealth, (beta - k)/(1-p).
double merton_consumption_rate(const ModelParams& params, bool constrained);

/// Unique K0 > 0 of the all-liquid sub-problem with source lambda * phi0
/// (phi0 on the HJB scale).  Throws NumericalError if the linear coefficient
/// is not positive.
double solve_K0(const ModelParams& params, double phi0);

/// Linear coefficient of the K0 equation, beta + lambda - p b_L^2/(2(1-p) sigma_L^2).
double k0_linear_coefficient(const ModelParams& params);

/// (1-p) p^{-1/(1-p)}: coefficient of the consumption term in the K0 equation.
double k0_consumption_coefficient(double p);

/// True iff investing in the illiquid asset is optimal: b_I/sigma_I > rho b_L/sigma_L.
bool participates(const ModelParams& params);

inline double reported_value(double hjb_phi0, double p) { return p * hjb_phi0; }
inline double hjb_value(double reported, double p) { return reported / p; }

/// U(c) = c^p / p.
template <typename Scalar>
Scalar utility(Scalar c, Scalar p)
{
    using std::pow;
    return c > Scalar(0) ? pow(c, p) / p : Scalar(0);
}

/// Legendre transform of U: ((1-p)/p) w^{-p/(1-p)}, w > 0.
template <typename Scalar>
Scalar conjugate_utility(Scalar w, Scalar p)
{
    using std::exp;
    using std::log;
    return (Scalar(1) - p) / p * exp(-p / (Scalar(1) - p) * log(w));
}

/// (U')^{-1}(w) = w^{-1/(1-p)}.
template <typename Scalar>
Scalar inverse_marginal_utility(Scalar w, Scalar p)
{
    using std::exp;
    using std::log;
    return exp(-log(w) / (Scalar(1) - p));
}

std::string describe(const ModelParams& params);

} // namespace illiquid
