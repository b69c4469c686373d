#pragma once

// Reduced one-dimensional HJB on the compactified liquid share
// zhat = z/(1+z) = x/(x+y), solved for the bounded unknown
//   u(t, zhat) = (1 - zhat)^p Phi(t, zhat/(1-zhat)) = Vhat(t, x, y) / (x+y)^p
// by an explicit monotone scheme, and the outer fixed point on Phi^0.
//
// With s = 1 - zhat the z-derivatives map to
//   s^{p-1} Phi_z  = D1 = p u + s u'
//   s^{p-2} Phi_zz = D2 = s^2 u'' - 2(1-p) s u' - p(1-p) u
// and the equation becomes
//   -u_t + kappa u - a u' - b u'' - lambda Phi^0 ftilde - sup_{c,theta} H(D1, D2) = 0
//   b     = K4^2/2 zhat^2 s^2
//   a     = K3 zhat s - K4^2 (1-p) zhat^2 s
//   kappa = K_lambda - K3 p zhat + K4^2/2 p(1-p) zhat^2
// where H is the consumption/liquid-investment Hamiltonian with controls
// expressed per unit of total wealth.

#include "illiquid/gauss.hpp"
#include "illiquid/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace illiquid {

/// Lower bound m for Phi_z and upper bound -d for Phi_zz inside the Hamiltonian.
struct DerivativeClamp {
    double m = 1e-8;
    double d = 1e-8;
};

/// Compact control set; unbounded by default.
struct ControlBounds {
    double c_max = std::numeric_limits<double>::infinity();
    double theta_max = std::numeric_limits<double>::infinity();
};

enum class SchemeProfile { Paper, Fast };

std::string to_string(SchemeProfile profile);
SchemeProfile scheme_profile_from_string(const std::string& name);

struct SchemeConfig {
    double T = 5.0;
    double dt = 5e-4;
    int n_space = 50;  // intervals on [0, 1]
    double fixed_point_tol = 1e-5;
    int max_outer_iters = 20000;
    DerivativeClamp clamp{};
    GridMethod grid_method = GridMethod::GaussHermite;
    int grid_size = 64;

    double dz() const { return 1.0 / n_space; }
    int n_time() const { return static_cast<int>(std::lround(T / dt)); }

    /// Horizon used for a given trading intensity (longer for rare trading).
    static double default_horizon(double lambda);
    /// dz = 0.02, dt = 5e-4.
    static SchemeConfig paper(double lambda);
    /// dz = 0.04, dt = 2e-3.
    static SchemeConfig fast(double lambda);
    static SchemeConfig for_profile(SchemeProfile profile, double lambda);

    /// Throws ValidationError on inconsistent sizes.
    void validate() const;
};

template <typename Scalar>
Scalar to_compact(Scalar z)
{
    return z / (z + Scalar(1));
}

/// Inverse of to_compact; returns +inf at zhat = 1 (the y = 0 boundary).
template <typename Scalar>
Scalar from_compact(Scalar zhat)
{
    if (zhat >= Scalar(1)) return std::numeric_limits<Scalar>::infinity();
    return zhat / (Scalar(1) - zhat);
}

struct HamiltonianMax {
    double value;
    double c_star;
    double theta_star;
};

/// sup over c >= 0, theta of U(c) - c g + theta K1 g + theta^2 K2^2 h / 2 with
/// g = max(phi_z, m), h = min(phi_zz, -d).  Without a liquid asset theta = 0.
/// Optional bounds restrict the controls to a compact set (projection of the
/// unconstrained maximizers, exact because both parts are concave).
HamiltonianMax hamiltonian_max(double phi_z, double phi_zz, const DerivedConstants& k,
                               const DerivativeClamp& clamp = {}, const ControlBounds& bounds = {});

/// Dirichlet data at zhat = 0 (no liquid wealth):
/// Phi0 lambda int_t^T exp(-K_lambda (s-t)) E[J_s^p] ds, in closed form.
double boundary_z0(double t, double phi0, double T, const DerivedConstants& k);

/// Dirichlet data at zhat = 1 (no illiquid wealth): g(t_i), i = 0..n_time, for
/// g' = a g - (1-p) p^{-1/(1-p)} g^{-p/(1-p)} - lambda Phi0, g(T) = 0.
/// Integrated in h = g^{1/(1-p)}, which removes the singularity at g = 0.
Eigen::VectorXd boundary_z1(double phi0, double T, double dt, const DerivedConstants& k);

/// Phi-tilde on the (t_i, zhat_j) grid, rows = time.
struct ValueSurface {
    Eigen::MatrixXd phi_tilde;
    double dt = 0;
    double dz = 0;
    double T = 0;
    double p = 0.5;
    double phi0_source = 0;

    Eigen::Index n_time() const { return phi_tilde.rows() - 1; }
    Eigen::Index n_space() const { return phi_tilde.cols() - 1; }
    double t(Eigen::Index i) const { return static_cast<double>(i) * dt; }
    double zhat(Eigen::Index j) const { return static_cast<double>(j) * dz; }
    /// Phi(t_i, z_j) = phi_tilde / (1-zhat_j)^p, j < n_space.
    double phi(Eigen::Index i, Eigen::Index j) const { return phi_tilde(i, j) / std::pow(1.0 - zhat(j), p); }
    /// Row index for time t, clamped to the grid.
    Eigen::Index time_index(double t) const;
};

struct SolveResult {
    double phi0 = 0;  // HJB scale
    ValueSurface surface;
    std::vector<double> outer_history;
    bool converged = false;
    double wall_seconds = 0;

    int iterations() const { return static_cast<int>(outer_history.size()) - 1; }
    /// V(1) on the reported scale.
    double value_at_one() const { return reported_value(phi0, surface.p); }
};

/// kappa, a and b of the compactified equation at one node.
struct CompactCoefficients {
    double kappa;
    double drift;
    double diffusion;
};
CompactCoefficients compact_coefficients(double zhat, const DerivedConstants& k);

/// Smallest diagonal coefficient of the explicit step before controls are
/// added; throws ValidationError when the scheme cannot be monotone.
double cfl_margin(const SchemeConfig& cfg, const DerivedConstants& k);

/// Per-node control bounds that keep the explicit step monotone.
std::vector<ControlBounds> monotone_control_bounds(const SchemeConfig& cfg, const DerivedConstants& k);

/// Backward explicit sweep from t = T to 0 with source Phi0 (HJB scale).
/// `terminal` defaults to zero.
ValueSurface solve_inner(double phi0, const SchemeConfig& cfg, const DerivedConstants& k, const KernelTable& kernel,
                         const std::optional<Eigen::VectorXd>& terminal = std::nullopt);

/// H0[Phi] = sup_z Phi(0,z)/(1+z)^p = max_j phi_tilde(0, j).
double h0(const ValueSurface& surface);
/// Index attaining h0; ties resolved toward larger zhat (smaller illiquid share).
Eigen::Index h0_argmax(const ValueSurface& surface);

/// Phi^{0,0} = 0, Phi^{0,n+1} = H0[solve_inner(Phi^{0,n})] until |step| < tol.
SolveResult fixed_point(const SchemeConfig& cfg, const DerivedConstants& k, const KernelTable& kernel);

/// Builds the Gaussian grid and kernel for `cfg`, then runs fixed_point.
SolveResult solve(const ModelParams& params, const SchemeConfig& cfg);

KernelTable build_kernel(const DerivedConstants& k, const SchemeConfig& cfg);

/// CSV with columns t, zhat, phi_tilde.  Every `time_stride`-th row is written.
void write_surface_csv(const ValueSurface& surface, const std::string& path, const std::string& header_comment,
                       int time_stride = 1);

/// Binary surface cache tagged with a parameter hash.
void save_surface(const ValueSurface& surface, const std::string& path, std::uint64_t params_hash);
std::optional<ValueSurface> load_surface(const std::string& path, std::uint64_t params_hash);

/// FNV-1a hash of the parameters and scheme that determine a solve.
std::uint64_t solve_hash(const ModelParams& params, const SchemeConfig& cfg);

} // namespace illiquid
