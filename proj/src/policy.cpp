#include "illiquid/policy.hpp"

#include "illiquid/error.hpp"

#include <algorithm>
#include <fstream>

namespace illiquid {

namespace {

// du/dzhat and d2u/dzhat2 along row i: central inside, second-order one-sided
// first derivative and three-point second difference at the ends.
void row_differences(const ValueSurface& s, Eigen::Index i, Eigen::Index j, double& du, double& d2u)
{
    const Eigen::Index M = s.n_space();
    const double dz = s.dz;
    auto u = [&](Eigen::Index jj) { return s.phi_tilde(i, jj); };
    if (j == 0) {
        du = (-3.0 * u(0) + 4.0 * u(1) - u(2)) / (2.0 * dz);
        d2u = (u(0) - 2.0 * u(1) + u(2)) / (dz * dz);
    } else if (j == M) {
        du = (3.0 * u(M) - 4.0 * u(M - 1) + u(M - 2)) / (2.0 * dz);
        d2u = (u(M) - 2.0 * u(M - 1) + u(M - 2)) / (dz * dz);
    } else {
        du = (u(j + 1) - u(j - 1)) / (2.0 * dz);
        d2u = (u(j + 1) - 2.0 * u(j) + u(j - 1)) / (dz * dz);
    }
}

struct NodeControls {
    double C;
    double Pi;
};

// j indexes the liquid-share grid.
NodeControls node_controls(const ValueSurface& s, Eigen::Index i, Eigen::Index j, const DerivedConstants& k,
                           const DerivativeClamp& clamp)
{
    if (j == 0) return {0.0, 0.0};  // x = 0: nothing to consume or invest
    double D1 = 0;
    double D2 = 0;
    normalized_derivatives(s, i, j, D1, D2);
    const double p = k.p;
    const double g = std::max(D1, clamp.m);
    const double h = std::min(D2, -clamp.d);
    const double C = inverse_marginal_utility(g, p);
    double Pi = 0.0;
    if (k.liquid_asset) {
        const double theta = -k.K1 * g / (k.K2 * k.K2 * h);
        Pi = theta + k.hedge_ratio * s.zhat(j);
    }
    return {C, Pi};
}

double lerp(double a, double b, double w) { return a + w * (b - a); }

// Locate x in a uniform grid with n intervals of width h: index and weight.
void locate(double x, double h, Eigen::Index n, Eigen::Index& idx, double& w)
{
    const double pos = std::clamp(x / h, 0.0, static_cast<double>(n));
    idx = std::min(static_cast<Eigen::Index>(pos), n - 1);
    w = pos - static_cast<double>(idx);
}

double bilinear(const Eigen::MatrixXd& m, double t, double y, double dt, double dy)
{
    Eigen::Index i, j;
    double wt, wy;
    locate(t, dt, m.rows() - 1, i, wt);
    locate(y, dy, m.cols() - 1, j, wy);
    const double a = lerp(m(i, j), m(i, j + 1), wy);
    const double b = lerp(m(i + 1, j), m(i + 1, j + 1), wy);
    return lerp(a, b, wt);
}

} // namespace

void normalized_derivatives(const ValueSurface& surface, Eigen::Index i, Eigen::Index j, double& D1, double& D2)
{
    const double p = surface.p;
    const double s = 1.0 - surface.zhat(j);
    const double u = surface.phi_tilde(i, j);
    double du = 0;
    double d2u = 0;
    row_differences(surface, i, j, du, d2u);
    D1 = p * u + s * du;
    D2 = s * s * d2u - 2.0 * (1.0 - p) * s * du - p * (1.0 - p) * u;
}

SurfaceDerivatives derivatives(const ValueSurface& surface)
{
    const Eigen::Index N = surface.n_time();
    const Eigen::Index M = surface.n_space();
    const double p = surface.p;
    SurfaceDerivatives d;
    d.phi_z.setZero(N + 1, M + 1);
    d.phi_zz.setZero(N + 1, M + 1);
    for (Eigen::Index i = 0; i <= N; ++i) {
        for (Eigen::Index j = 0; j < M; ++j) {
            const double s = 1.0 - surface.zhat(j);
            double D1 = 0;
            double D2 = 0;
            normalized_derivatives(surface, i, j, D1, D2);
            d.phi_z(i, j) = std::pow(s, 1.0 - p) * D1;
            d.phi_zz(i, j) = std::pow(s, 2.0 - p) * D2;
        }
    }
    return d;
}

Allocation optimal_allocation(const ValueSurface& surface)
{
    const Eigen::Index j = h0_argmax(surface);
    const double zhat = surface.zhat(j);
    return {from_compact(zhat), static_cast<double>(surface.n_space() - j) * surface.dz};
}

PolicyField build_policy(const ValueSurface& surface, const DerivedConstants& k, const DerivativeClamp& clamp)
{
    const Eigen::Index N = surface.n_time();
    const Eigen::Index M = surface.n_space();
    PolicyField pf;
    pf.C_hat.resize(N + 1, M + 1);
    pf.Pi_hat.resize(N + 1, M + 1);
    pf.dt = surface.dt;
    pf.dy = surface.dz;
    for (Eigen::Index i = 0; i <= N; ++i) {
        for (Eigen::Index j = 0; j <= M; ++j) {
            const NodeControls c = node_controls(surface, i, j, k, clamp);
            pf.C_hat(i, M - j) = c.C;
            pf.Pi_hat(i, M - j) = c.Pi;
        }
    }
    const Allocation a = optimal_allocation(surface);
    pf.z_star = a.z_star;
    pf.z_hat_star = a.z_hat_star;
    return pf;
}

double PolicyField::consumption(double t, double yhat) const { return bilinear(C_hat, t, yhat, dt, dy); }

double PolicyField::liquid_investment(double t, double yhat) const { return bilinear(Pi_hat, t, yhat, dt, dy); }

void PolicyField::controls(double t, double yhat, double& c, double& pi) const
{
    Eigen::Index i, j;
    double wt, wy;
    locate(t, dt, n_time(), i, wt);
    locate(yhat, dy, n_space(), j, wy);
    auto blend = [&](const Eigen::MatrixXd& m) {
        const double a = lerp(m(i, j), m(i, j + 1), wy);
        const double b = lerp(m(i + 1, j), m(i + 1, j + 1), wy);
        return lerp(a, b, wt);
    };
    c = blend(C_hat);
    pi = blend(Pi_hat);
}

namespace {

template <typename Pick>
double surface_feedback(double t, double yhat, const ValueSurface& s, const DerivedConstants& k,
                        const DerivativeClamp& clamp, Pick pick)
{
    const Eigen::Index M = s.n_space();
    Eigen::Index i, jy;
    double wt, wy;
    locate(t, s.dt, s.n_time(), i, wt);
    locate(yhat, s.dz, M, jy, wy);
    auto at = [&](Eigen::Index ii, Eigen::Index jj) { return pick(node_controls(s, ii, M - jj, k, clamp)); };
    const double a = lerp(at(i, jy), at(i, jy + 1), wy);
    const double b = lerp(at(i + 1, jy), at(i + 1, jy + 1), wy);
    return lerp(a, b, wt);
}

} // namespace

double consumption_feedback(double t, double yhat, const ValueSurface& surface, const DerivedConstants& k,
                            const DerivativeClamp& clamp)
{
    return surface_feedback(t, yhat, surface, k, clamp, [](const NodeControls& c) { return c.C; });
}

double liquid_feedback(double t, double yhat, const ValueSurface& surface, const DerivedConstants& k,
                       const DerivativeClamp& clamp)
{
    return surface_feedback(t, yhat, surface, k, clamp, [](const NodeControls& c) { return c.Pi; });
}

double cost_of_illiquidity(double value_at_one, const ModelParams& params)
{
    if (!(value_at_one > 0)) throw ValidationError("cost of illiquidity needs a positive value");
    const double vm = merton_value(params, false);
    return std::pow(vm / value_at_one, 1.0 / params.p) - 1.0;
}

ObservationResponse observation_response(double B1, double t, const ModelParams& params, const PolicyField& policy,
                                         double y0, double x_t)
{
    const SplitConstants sc = split_constants(params);
    const double r2 = params.rho * params.rho;
    const double var_Y = params.sigma_I * params.sigma_I * (r2 + params.gamma * params.gamma * (1.0 - r2));
    const double y = y0 * std::exp((sc.b_Y - 0.5 * var_Y) * t + params.sigma_I * std::sqrt(1.0 - r2) * params.gamma * B1);
    const double R = x_t + y;
    if (!(R > 0)) return {y, 0.0, 0.0};
    const double yhat = y / R;
    return {y, R * policy.consumption(t, yhat), R * policy.liquid_investment(t, yhat)};
}

double merton_liquid_line(const ModelParams& m, double yhat)
{
    if (!m.liquid_asset) return 0.0;
    return (m.b_L - (1.0 - m.p) * m.rho * m.sigma_L * m.sigma_I * yhat) / ((1.0 - m.p) * m.sigma_L * m.sigma_L);
}

void write_policy_csv(const PolicyField& policy, const std::string& path, const std::string& header_comment,
                      int time_stride)
{
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    out << header_comment << "t,zhat,C_hat,Pi_hat\n";
    out.precision(10);
    const Eigen::Index stride = std::max(time_stride, 1);
    for (Eigen::Index i = 0; i <= policy.n_time(); i += stride)
        for (Eigen::Index j = 0; j <= policy.n_space(); ++j)
            out << policy.dt * static_cast<double>(i) << ',' << policy.dy * static_cast<double>(j) << ','
                << policy.C_hat(i, j) << ',' << policy.Pi_hat(i, j) << '\n';
}

} // namespace illiquid
