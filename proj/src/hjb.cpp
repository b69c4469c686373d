#include "illiquid/hjb.hpp"

#include "illiquid/error.hpp"
#include "illiquid/hash.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <fstream>
#include <sstream>

namespace illiquid {

std::string to_string(SchemeProfile profile) { return profile == SchemeProfile::Paper ? "paper" : "fast"; }

SchemeProfile scheme_profile_from_string(const std::string& name)
{
    if (name == "paper") return SchemeProfile::Paper;
    if (name == "fast") return SchemeProfile::Fast;
    throw ValidationError("unknown profile '" + name + "' (expected paper or fast)");
}

double SchemeConfig::default_horizon(double lambda)
{
    // e^{-lambda T} of the mass survives past T; trading rarely needs a longer window
    if (lambda <= 1.0) return 6.0;
    if (lambda <= 3.0) return 4.0;
    if (lambda <= 5.0) return 3.0;
    if (lambda <= 10.0) return 2.0;
    return 1.0;
}

SchemeConfig SchemeConfig::paper(double lambda)
{
    SchemeConfig c;
    c.T = default_horizon(lambda);
    c.dt = 5e-4;
    c.n_space = 50;
    return c;
}

SchemeConfig SchemeConfig::fast(double lambda)
{
    SchemeConfig c;
    c.T = default_horizon(lambda);
    c.dt = 2e-3;
    c.n_space = 25;
    c.grid_size = 32;
    return c;
}

SchemeConfig SchemeConfig::for_profile(SchemeProfile profile, double lambda)
{
    return profile == SchemeProfile::Paper ? paper(lambda) : fast(lambda);
}

void SchemeConfig::validate() const
{
    auto fail = [](const std::string& what) { throw ValidationError("invalid scheme: " + what); };
    if (!(T > 0) || !std::isfinite(T)) fail("T must be > 0");
    if (!(dt > 0) || dt > T) fail("dt must lie in (0, T]");
    if (std::abs(n_time() * dt - T) > 1e-9 * T) fail("T must be a multiple of dt");
    if (n_space < 2) fail("at least two space intervals are required");
    if (!(fixed_point_tol > 0)) fail("fixed_point_tol must be > 0");
    if (max_outer_iters < 1) fail("max_outer_iters must be >= 1");
    if (!(clamp.m > 0) || !(clamp.d > 0)) fail("derivative clamps must be > 0");
    if (grid_size < 2) fail("grid_size must be >= 2");
}

HamiltonianMax hamiltonian_max(double phi_z, double phi_zz, const DerivedConstants& k, const DerivativeClamp& clamp,
                               const ControlBounds& bounds)
{
    const double p = k.p;
    const double g = std::max(phi_z, clamp.m);
    const double h = std::min(phi_zz, -clamp.d);

    const double c = std::min(inverse_marginal_utility(g, p), bounds.c_max);
    double value = utility(c, p) - c * g;

    double theta = 0.0;
    if (k.liquid_asset) {
        theta = -k.K1 * g / (k.K2 * k.K2 * h);
        theta = std::clamp(theta, -bounds.theta_max, bounds.theta_max);
        value += theta * k.K1 * g + 0.5 * theta * theta * k.K2 * k.K2 * h;
    }
    return {value, c, theta};
}

double boundary_z0(double t, double phi0, double T, const DerivedConstants& k)
{
    const double tau = T - t;
    const double r = k.m_J - k.K_lambda;
    // int_t^T e^{-K(s-t)} e^{m s} ds = e^{m t} (e^{r tau} - 1)/r
    const double integral = std::abs(r * tau) < 1e-12 ? tau : std::expm1(r * tau) / r;
    return phi0 * k.lambda * std::exp(k.m_J * t) * integral;
}

Eigen::VectorXd boundary_z1(double phi0, double T, double dt, const DerivedConstants& k)
{
    const int n = static_cast<int>(std::lround(T / dt));
    const double p = k.p;
    const double a = k.k0_a;
    const double C = k0_consumption_coefficient(p);
    const double S = k.lambda * phi0;
    auto rhs = [&](double h) { return (-a * h + C + S * pow_nonneg(h, p)) / (1.0 - p); };

    Eigen::VectorXd g(n + 1);
    g[n] = 0.0;
    double h = 0.0;
    constexpr int sub = 8;
    const double step = dt / sub;
    for (int i = n - 1; i >= 0; --i) {
        for (int s = 0; s < sub; ++s) {
            const double k1 = rhs(h);
            const double k2 = rhs(std::max(h + 0.5 * step * k1, 0.0));
            const double k3 = rhs(std::max(h + 0.5 * step * k2, 0.0));
            const double k4 = rhs(std::max(h + step * k3, 0.0));
            h = std::max(h + step / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), 0.0);
        }
        g[i] = pow_nonneg(h, 1.0 - p);
    }
    return g;
}

Eigen::Index ValueSurface::time_index(double t) const
{
    const auto i = static_cast<Eigen::Index>(std::lround(t / dt));
    return std::clamp<Eigen::Index>(i, 0, n_time());
}

CompactCoefficients compact_coefficients(double zhat, const DerivedConstants& k)
{
    const double s = 1.0 - zhat;
    const double p = k.p;
    const double K4sq = k.K4 * k.K4;
    return {k.K_lambda - k.K3 * p * zhat + 0.5 * K4sq * p * (1.0 - p) * zhat * zhat,
            k.K3 * zhat * s - K4sq * (1.0 - p) * zhat * zhat * s, 0.5 * K4sq * zhat * zhat * s * s};
}

namespace {

// Linear coefficients of the compactified equation at each node.
struct NodeCoefficients {
    Eigen::VectorXd drift;      // a
    Eigen::VectorXd diffusion;  // b
    Eigen::VectorXd kappa;
    Eigen::VectorXd budget;     // diagonal left for the controls
};

NodeCoefficients node_coefficients(const SchemeConfig& cfg, const DerivedConstants& k)
{
    const int M = cfg.n_space;
    const double dz = cfg.dz();
    const double dt = cfg.dt;
    NodeCoefficients nc;
    nc.drift.setZero(M + 1);
    nc.diffusion.setZero(M + 1);
    nc.kappa.setZero(M + 1);
    nc.budget.setOnes(M + 1);
    for (int j = 0; j <= M; ++j) {
        const CompactCoefficients c = compact_coefficients(j * dz, k);
        nc.diffusion[j] = c.diffusion;
        nc.drift[j] = c.drift;
        nc.kappa[j] = c.kappa;
        nc.budget[j] =
            1.0 - dt * (2.0 * nc.diffusion[j] / (dz * dz) + std::abs(nc.drift[j]) / dz + nc.kappa[j]);
    }
    return nc;
}

constexpr double kMinMargin = 0.05;

} // namespace

double cfl_margin(const SchemeConfig& cfg, const DerivedConstants& k)
{
    const NodeCoefficients nc = node_coefficients(cfg, k);
    const double margin = nc.budget.segment(1, cfg.n_space - 1).minCoeff();
    if (margin < kMinMargin) {
        std::ostringstream os;
        os << "time step too large for a monotone explicit scheme: diagonal margin " << margin << " < "
           << kMinMargin << " (dt = " << cfg.dt << ", dz = " << cfg.dz() << ")";
        throw ValidationError(os.str());
    }
    return margin;
}

std::vector<ControlBounds> monotone_control_bounds(const SchemeConfig& cfg, const DerivedConstants& k)
{
    const NodeCoefficients nc = node_coefficients(cfg, k);
    const int M = cfg.n_space;
    const double dz = cfg.dz();
    const double dt = cfg.dt;
    const double p = k.p;
    const double K2sq = k.K2 * k.K2;
    std::vector<ControlBounds> out(static_cast<std::size_t>(M + 1));
    for (int j = 1; j < M; ++j) {
        const double s = 1.0 - j * dz;
        const double half = 0.5 * std::max(nc.budget[j], 0.0);
        ControlBounds& b = out[static_cast<std::size_t>(j)];
        b.c_max = half / (dt * (s / dz + p));
        if (k.liquid_asset) {
            // dt [alpha theta^2 + beta |theta|] <= half
            const double alpha = dt * K2sq * (s * s / (dz * dz) + (1.0 - p) * s / dz + 0.5 * p * (1.0 - p));
            const double beta = dt * std::abs(k.K1) * (s / dz + p);
            b.theta_max = (-beta + std::sqrt(beta * beta + 4.0 * alpha * half)) / (2.0 * alpha);
        } else {
            b.theta_max = 0.0;
        }
    }
    return out;
}

namespace {

// sup over theta in [-tmax, tmax] of
//   theta K1 (p u + s D) + theta^2 (K2^2/2 (s^2 D2 - p(1-p) u) - K2^2 (1-p) s D)
// with D = Dp where phi(theta) = theta (K1 - theta K2^2 (1-p)) > 0 and Dm otherwise.
double theta_sup(double u, double s, double Dp, double Dm, double D2, double tmax, const DerivedConstants& k)
{
    const double p = k.p;
    const double K2sq = k.K2 * k.K2;
    const double root = k.K1 / (K2sq * (1.0 - p));  // second zero of phi
    auto quad = [&](double D, double& lin, double& sq) {
        lin = k.K1 * (p * u + s * D);
        sq = 0.5 * K2sq * (s * s * D2 - p * (1.0 - p) * u) - K2sq * (1.0 - p) * s * D;
    };
    double lin_p, sq_p, lin_m, sq_m;
    quad(Dp, lin_p, sq_p);
    quad(Dm, lin_m, sq_m);

    std::array<double, 4> cuts{-tmax, std::min(0.0, root), std::max(0.0, root), tmax};
    double best = 0.0;  // theta = 0
    for (int piece = 0; piece < 3; ++piece) {
        const double lo = std::max(cuts[piece], -tmax);
        const double hi = std::min(cuts[piece + 1], tmax);
        if (!(hi > lo)) continue;
        const double mid = 0.5 * (lo + hi);
        const bool positive = mid * (k.K1 - mid * K2sq * (1.0 - p)) > 0.0;
        const double lin = positive ? lin_p : lin_m;
        const double sq = positive ? sq_p : sq_m;
        auto f = [&](double th) { return th * lin + th * th * sq; };
        best = std::max({best, f(lo), f(hi)});
        if (sq < 0.0) {
            const double v = -lin / (2.0 * sq);
            if (v > lo && v < hi) best = std::max(best, f(v));
        }
    }
    return best;
}

} // namespace

ValueSurface solve_inner(double phi0, const SchemeConfig& cfg, const DerivedConstants& k, const KernelTable& kernel,
                         const std::optional<Eigen::VectorXd>& terminal)
{
    cfg.validate();
    const int N = cfg.n_time();
    const int M = cfg.n_space;
    if (kernel.n_time() != N || kernel.n_space() != M)
        throw ValidationError("kernel table does not match the scheme grid");
    if (terminal && terminal->size() != M + 1) throw ValidationError("terminal data has the wrong size");
    cfl_margin(cfg, k);

    const double dz = cfg.dz();
    const double dt = cfg.dt;
    const double p = k.p;
    const double q = 1.0 / (1.0 - p);
    const NodeCoefficients nc = node_coefficients(cfg, k);
    const std::vector<ControlBounds> bounds = monotone_control_bounds(cfg, k);
    const Eigen::VectorXd g1 = boundary_z1(phi0, cfg.T, dt, k);
    const double source = k.lambda * phi0;

    ValueSurface surf;
    surf.phi_tilde.resize(N + 1, M + 1);
    surf.dt = dt;
    surf.dz = dz;
    surf.T = cfg.T;
    surf.p = p;
    surf.phi0_source = phi0;
    if (terminal)
        surf.phi_tilde.row(N) = terminal->transpose();
    else
        surf.phi_tilde.row(N).setZero();

    Eigen::VectorXd u = surf.phi_tilde.row(N).transpose();
    Eigen::VectorXd next(M + 1);
    for (int i = N - 1; i >= 0; --i) {
        for (int j = 1; j < M; ++j) {
            const double s = 1.0 - j * dz;
            const double Dp = (u[j + 1] - u[j]) / dz;
            const double Dm = (u[j] - u[j - 1]) / dz;
            const double D2 = (u[j + 1] - 2.0 * u[j] + u[j - 1]) / (dz * dz);
            const double a = nc.drift[j];
            double rate = nc.diffusion[j] * D2 + (a > 0 ? a * Dp : a * Dm) - nc.kappa[j] * u[j];
            rate += source * kernel.normalized(i + 1, j);

            // consumption pulls mass toward zhat = 0: backward difference
            const double D1m = p * u[j] + s * Dm;
            const ControlBounds& cb = bounds[static_cast<std::size_t>(j)];
            const double c = std::min(std::exp(-q * std::log(std::max(D1m, cfg.clamp.m))), cb.c_max);
            rate += utility(c, p) - c * D1m;

            if (k.liquid_asset) rate += theta_sup(u[j], s, Dp, Dm, D2, cb.theta_max, k);
            next[j] = u[j] + dt * rate;
        }
        next[0] = boundary_z0(i * dt, phi0, cfg.T, k);
        next[M] = g1[i];
        if (!next.allFinite()) {
            Eigen::Index bad = 0;
            for (; bad <= M && std::isfinite(next[bad]); ++bad) {
            }
            std::ostringstream os;
            os << "non-finite value at t = " << i * dt << ", zhat = " << bad * dz;
            throw NumericalError(os.str());
        }
        u.swap(next);
        surf.phi_tilde.row(i) = u.transpose();
    }
    return surf;
}

double h0(const ValueSurface& surface) { return surface.phi_tilde.row(0).maxCoeff(); }

Eigen::Index h0_argmax(const ValueSurface& surface)
{
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < surface.phi_tilde.cols(); ++j)
        if (surface.phi_tilde(0, j) >= surface.phi_tilde(0, best)) best = j;
    return best;
}

SolveResult fixed_point(const SchemeConfig& cfg, const DerivedConstants& k, const KernelTable& kernel)
{
    const auto start = std::chrono::steady_clock::now();
    SolveResult res;
    double phi = 0.0;
    res.outer_history.push_back(phi);
    for (int n = 0; n < cfg.max_outer_iters; ++n) {
        res.surface = solve_inner(phi, cfg, k, kernel);
        const double next = h0(res.surface);
        res.outer_history.push_back(next);
        const double step = std::abs(next - phi);
        phi = next;
        if (step < cfg.fixed_point_tol) {
            res.converged = true;
            break;
        }
    }
    res.phi0 = phi;
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return res;
}

KernelTable build_kernel(const DerivedConstants& k, const SchemeConfig& cfg)
{
    const GaussGrid grid = build_grid(cfg.grid_size, cfg.grid_method);
    return KernelTable::build(k, grid, cfg.n_time(), cfg.n_space, cfg.dt);
}

SolveResult solve(const ModelParams& params, const SchemeConfig& cfg)
{
    const DerivedConstants k = hjb_constants(params);
    cfg.validate();
    cfl_margin(cfg, k);
    return fixed_point(cfg, k, build_kernel(k, cfg));
}

void write_surface_csv(const ValueSurface& surface, const std::string& path, const std::string& header_comment,
                       int time_stride)
{
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write " + path);
    out << header_comment;
    out << "t,zhat,phi_tilde\n";
    out.precision(10);
    const Eigen::Index stride = std::max(time_stride, 1);
    for (Eigen::Index i = 0; i <= surface.n_time(); i += stride)
        for (Eigen::Index j = 0; j <= surface.n_space(); ++j)
            out << surface.t(i) << ',' << surface.zhat(j) << ',' << surface.phi_tilde(i, j) << '\n';
}

namespace {
constexpr std::array<char, 8> kSurfaceMagic{'I', 'L', 'Q', 'S', 'U', 'R', 'F', '1'};
}

void save_surface(const ValueSurface& s, const std::string& path, std::uint64_t params_hash)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path);
    const std::int64_t rows = s.phi_tilde.rows();
    const std::int64_t cols = s.phi_tilde.cols();
    out.write(kSurfaceMagic.data(), kSurfaceMagic.size());
    out.write(reinterpret_cast<const char*>(&params_hash), sizeof params_hash);
    out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
    out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
    for (double v : {s.dt, s.dz, s.T, s.p, s.phi0_source}) out.write(reinterpret_cast<const char*>(&v), sizeof v);
    out.write(reinterpret_cast<const char*>(s.phi_tilde.data()),
              static_cast<std::streamsize>(sizeof(double) * s.phi_tilde.size()));
}

std::optional<ValueSurface> load_surface(const std::string& path, std::uint64_t params_hash)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::array<char, 8> magic{};
    std::uint64_t stored = 0;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    in.read(magic.data(), magic.size());
    in.read(reinterpret_cast<char*>(&stored), sizeof stored);
    in.read(reinterpret_cast<char*>(&rows), sizeof rows);
    in.read(reinterpret_cast<char*>(&cols), sizeof cols);
    if (!in || magic != kSurfaceMagic || stored != params_hash || rows <= 0 || cols <= 0) return std::nullopt;
    ValueSurface s;
    for (double* v : {&s.dt, &s.dz, &s.T, &s.p, &s.phi0_source}) in.read(reinterpret_cast<char*>(v), sizeof *v);
    s.phi_tilde.resize(rows, cols);
    in.read(reinterpret_cast<char*>(s.phi_tilde.data()),
            static_cast<std::streamsize>(sizeof(double) * s.phi_tilde.size()));
    if (!in) return std::nullopt;
    return s;
}

std::uint64_t solve_hash(const ModelParams& m, const SchemeConfig& cfg)
{
    Fnv1a f;
    for (double v : {m.b_L, m.sigma_L, m.b_I, m.sigma_I, m.rho, m.beta, m.p, m.lambda, m.gamma}) f.value(v);
    f.value(m.liquid_asset);
    for (double v : {cfg.T, cfg.dt, cfg.fixed_point_tol, cfg.clamp.m, cfg.clamp.d}) f.value(v);
    f.value(cfg.n_space);
    f.value(cfg.max_outer_iters);
    f.value(static_cast<int>(cfg.grid_method));
    f.value(cfg.grid_size);
    return f.h;
}

} // namespace illiquid
