#include "illiquid/model.hpp"

#include "illiquid/error.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

namespace illiquid {

namespace {

// sup over u_L in R (dropped when !with_liquid) and u in [lo, hi] of
//   p (u_L b1 + u b2) - p(1-p)/2 (u_L^2 s1^2 + u^2 v2 + 2 u_L u c12).
// u_L is eliminated in closed form, leaving a concave quadratic in u that is
// maximized by projection.
struct GrowthSup {
    double value;
    double u;    // maximizing second-asset proportion
    double u_L;  // maximizing liquid proportion
};

GrowthSup growth_sup(double p, bool with_liquid, double b1, double s1, double b2, double v2,
                     double c12, double lo, double hi)
{
    double base = 0.0;
    double slope = b2;
    double curvature = v2;
    if (with_liquid) {
        base = p * b1 * b1 / (2.0 * (1.0 - p) * s1 * s1);
        slope = b2 - c12 * b1 / (s1 * s1);
        curvature = v2 - c12 * c12 / (s1 * s1);
    }
    // reduced objective: base + p u slope - p(1-p)/2 u^2 curvature
    auto reduced = [&](double u) { return base + p * u * slope - 0.5 * p * (1.0 - p) * u * u * curvature; };

    double u = 0.0;
    constexpr double inf = std::numeric_limits<double>::infinity();
    if (curvature > 1e-300) {
        u = slope / ((1.0 - p) * curvature);
        u = std::clamp(u, lo, hi);
    } else if (slope > 0.0) {
        u = hi;
    } else if (slope < 0.0) {
        u = lo;
    }
    double value = std::isinf(u) ? inf : reduced(u);
    double u_L = 0.0;
    if (with_liquid) u_L = (b1 - (1.0 - p) * c12 * u) / ((1.0 - p) * s1 * s1);
    return {value, u, u_L};
}

GrowthSup kp_sup(const ModelParams& m, bool constrained)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    const double lo = constrained ? 0.0 : -inf;
    const double hi = constrained ? 1.0 : inf;
    return growth_sup(m.p, m.liquid_asset, m.b_L, m.sigma_L, m.b_I, m.sigma_I * m.sigma_I,
                      m.rho * m.sigma_L * m.sigma_I, lo, hi);
}

} // namespace

void validate(const ModelParams& m)
{
    auto fail = [](const std::string& what) { throw ValidationError("invalid parameters: " + what); };
    auto finite = [](double v) { return std::isfinite(v); };
    if (!finite(m.b_L) || !finite(m.b_I) || !finite(m.beta) || !finite(m.sigma_L) || !finite(m.sigma_I) ||
        !finite(m.rho) || !finite(m.p) || !finite(m.lambda) || !finite(m.gamma))
        fail("non-finite value");
    if (!(m.sigma_L > 0)) fail("sigma_L must be > 0");
    if (!(m.sigma_I > 0)) fail("sigma_I must be > 0");
    if (!(m.rho > -1 && m.rho < 1)) fail("rho must lie in (-1, 1)");
    if (!(m.p > 0 && m.p < 1)) fail("p must lie in (0, 1)");
    if (!(m.gamma >= 0 && m.gamma <= 1)) fail("gamma must lie in [0, 1]");
    if (!(m.lambda >= 0)) fail("lambda must be >= 0");
    if (!(m.beta > 0)) fail("beta must be > 0");
    if (!m.liquid_asset && m.rho != 0.0) fail("rho must be 0 when there is no liquid asset");
    const double kp = compute_kp(m);
    if (!(m.beta > kp)) {
        std::ostringstream os;
        os << "beta = " << m.beta << " must exceed k_p = " << kp << " (value function infinite)";
        fail(os.str());
    }
}

double compute_kp(const ModelParams& params) { return kp_sup(params, true).value; }

double compute_kp_unconstrained(const ModelParams& params) { return kp_sup(params, false).value; }

double merton_illiquid_share(const ModelParams& params, bool constrained)
{
    return kp_sup(params, constrained).u;
}

double merton_liquid_share(const ModelParams& params, bool constrained)
{
    return kp_sup(params, constrained).u_L;
}

SplitConstants split_constants(const ModelParams& m)
{
    const double g2 = m.gamma * m.gamma;
    const double r2 = m.rho * m.rho;
    const double hedge = m.liquid_asset ? m.rho * m.b_L * m.sigma_I / m.sigma_L : 0.0;
    SplitConstants s{};
    s.b_Y = g2 * m.b_I + (1.0 - g2) * hedge;
    s.b_J = m.b_I - s.b_Y;
    s.sigma_J = m.sigma_I * std::sqrt(1.0 - r2) * std::sqrt(1.0 - g2);

    const double var_Y = m.sigma_I * m.sigma_I * (r2 + g2 * (1.0 - r2));
    s.k_LYp = growth_sup(m.p, m.liquid_asset, m.b_L, m.sigma_L, s.b_Y, var_Y, m.rho * m.sigma_L * m.sigma_I,
                         0.0, 1.0)
                  .value;
    s.k_Jp = growth_sup(m.p, false, 0.0, 1.0, s.b_J, s.sigma_J * s.sigma_J, 0.0, 0.0, 1.0).value;
    return s;
}

DerivedConstants hjb_constants(const ModelParams& m)
{
    validate(m);
    const SplitConstants s = split_constants(m);
    const double p = m.p;
    const double g2 = m.gamma * m.gamma;
    const double r2 = m.rho * m.rho;
    const double hedge = m.liquid_asset ? m.rho * m.b_L * m.sigma_I / m.sigma_L : 0.0;

    DerivedConstants k;
    k.k_p = compute_kp(m);
    k.b_Y = s.b_Y;
    k.b_J = s.b_J;
    k.sigma_J = s.sigma_J;
    k.k_LYp = s.k_LYp;
    k.k_Jp = s.k_Jp;
    k.var_Y = m.sigma_I * m.sigma_I * (r2 + g2 * (1.0 - r2));
    // Discount of the normalized problem: beta + lambda - log E[Y_s^p]/s.
    k.K_lambda = m.beta + m.lambda - p * s.b_Y + 0.5 * p * (1.0 - p) * k.var_Y;
    k.K1 = m.b_L - m.rho * m.sigma_I * m.sigma_L * (1.0 - p);
    k.K2 = m.sigma_L;
    k.K3 = g2 * (-m.b_I + hedge + (1.0 - r2) * (1.0 - p) * m.sigma_I * m.sigma_I);
    k.K4 = -m.sigma_I * m.gamma * std::sqrt(1.0 - r2);
    k.Khat1 = m.b_L - m.rho * m.sigma_I * m.sigma_L;
    k.Khat3 = g2 * (-m.b_I + hedge + (1.0 - r2) * m.sigma_I * m.sigma_I);
    k.m_J = p * s.b_J - 0.5 * p * (1.0 - p) * s.sigma_J * s.sigma_J;
    k.k0_a = k0_linear_coefficient(m);
    k.hedge_ratio = m.liquid_asset ? m.rho * m.sigma_I / m.sigma_L : 0.0;
    k.p = p;
    k.lambda = m.lambda;
    k.liquid_asset = m.liquid_asset;
    return k;
}

double merton_value(const ModelParams& params, bool constrained)
{
    const double k = constrained ? compute_kp(params) : compute_kp_unconstrained(params);
    if (!(params.beta > k)) return std::numeric_limits<double>::infinity();
    return std::pow((1.0 - params.p) / (params.beta - k), 1.0 - params.p);
}

double merton_consumption_rate(const ModelParams& params, bool constrained)
{
    const double k = constrained ? compute_kp(params) : compute_kp_unconstrained(params);
    return (params.beta - k) / (1.0 - params.p);
}

double k0_linear_coefficient(const ModelParams& m)
{
    const double liquid = m.liquid_asset ? m.p * m.b_L * m.b_L / (2.0 * (1.0 - m.p) * m.sigma_L * m.sigma_L) : 0.0;
    return m.beta + m.lambda - liquid;
}

double k0_consumption_coefficient(double p) { return (1.0 - p) * std::pow(p, -1.0 / (1.0 - p)); }

double solve_K0(const ModelParams& m, double phi0)
{
    const double a = k0_linear_coefficient(m);
    if (!(a > 0)) throw NumericalError("K0 equation: linear coefficient is not positive, value is infinite");
    if (!(phi0 >= 0)) throw ValidationError("K0 equation: source Phi0 must be >= 0");
    const double p = m.p;
    const double q = p / (1.0 - p);
    const double c = k0_consumption_coefficient(p);
    const double rhs = m.lambda * phi0;
    // increasing in K from -inf (K -> 0+) to +inf
    auto residual = [&](double K) { return a * K - c * std::pow(K, -q) - rhs; };

    double lo = 1.0;
    double hi = 1.0;
    while (residual(lo) > 0) lo *= 0.5;
    while (residual(hi) < 0) hi *= 2.0;
    for (int it = 0; it < 400 && (hi - lo) > 1e-15 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        (residual(mid) < 0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

bool participates(const ModelParams& m)
{
    if (!m.liquid_asset) return m.b_I > 0;
    return m.b_I / m.sigma_I > m.rho * m.b_L / m.sigma_L;
}

std::string describe(const ModelParams& m)
{
    std::ostringstream os;
    os << "b_L=" << m.b_L << " sigma_L=" << m.sigma_L << " b_I=" << m.b_I << " sigma_I=" << m.sigma_I
       << " rho=" << m.rho << " beta=" << m.beta << " p=" << m.p << " lambda=" << m.lambda
       << " gamma=" << m.gamma << " liquid_asset=" << (m.liquid_asset ? 1 : 0);
    return os.str();
}

} // namespace illiquid
