#pragma once

// Gaussian node/weight grids and the expectation operator over the
// unobserved factor J_t = exp((b_J - sigma_J^2/2) t + sigma_J W_t).

#include "illiquid/model.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>

namespace illiquid {

enum class GridMethod { GaussHermite, Quantizer };

std::string to_string(GridMethod method);
GridMethod grid_method_from_string(const std::string& name);

/// Discrete approximation of N(0,1).
struct GaussGrid {
    Eigen::VectorXd nodes;
    Eigen::VectorXd weights;
    GridMethod method = GridMethod::GaussHermite;

    Eigen::Index size() const { return nodes.size(); }

    /// sum_i w_i f(x_i)
    template <typename F>
    double expect(F&& f) const
    {
        double acc = 0.0;
        for (Eigen::Index i = 0; i < nodes.size(); ++i) acc += weights[i] * f(nodes[i]);
        return acc;
    }
};

/// Gauss-Hermite rule (probabilists' weight) or a stationary L2 quantizer.
/// The quantizer solves the Lloyd centroid conditions by Newton iteration
/// from a stratified inverse-CDF seed; throws NumericalError with the
/// iteration count if it does not converge.
GaussGrid build_grid(int n, GridMethod method = GridMethod::GaussHermite);

/// E[J_t^p] for geometric J with drift b_J and volatility sigma_J, J_0 = 1.
template <typename Scalar>
Scalar lognormal_moment(Scalar b_J, Scalar sigma_J, Scalar t, Scalar p)
{
    using std::exp;
    return exp(t * (p * b_J - p * (Scalar(1) - p) * sigma_J * sigma_J / Scalar(2)));
}

/// J_t evaluated at a standard-normal abscissa.
inline double j_factor(const DerivedConstants& k, double t, double x)
{
    return std::exp((k.b_J - 0.5 * k.sigma_J * k.sigma_J) * t + k.sigma_J * std::sqrt(t) * x);
}

/// a^p for a >= 0, computed through exp/log and 0 at a = 0.
inline double pow_nonneg(double a, double p) { return a > 0.0 ? std::exp(p * std::log(a)) : 0.0; }

/// f(t, z) = E[(z + J_t)^p].
double f_gamma(double t, double z, const DerivedConstants& k, const GaussGrid& grid);

/// E[(zhat + (1 - zhat) J_t)^p] = (1 - zhat)^p f(t, zhat/(1 - zhat)), bounded on [0, 1].
double f_gamma_normalized(double t, double zhat, const DerivedConstants& k, const GaussGrid& grid);

/// G[psi](t, x, y) = E[psi(x + y J_t)].
template <typename Psi>
double g_operator(Psi&& psi, double t, double x, double y, const DerivedConstants& k, const GaussGrid& grid)
{
    return grid.expect([&](double node) { return psi(x + y * j_factor(k, t, node)); });
}

/// f on the PDE grid, stored in normalized form E[(zhat + (1-zhat) J_t)^p]
/// with rows indexed by time t_i = i dt and columns by zhat_j = j dz.
class KernelTable {
public:
    KernelTable() = default;
    KernelTable(Eigen::MatrixXd values, double dt, double dz) : values_(std::move(values)), dt_(dt), dz_(dz) {}

    static KernelTable build(const DerivedConstants& k, const GaussGrid& grid, int n_time, int n_space, double dt);

    double normalized(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }
    /// f(t_i, z_j) with z_j = zhat_j / (1 - zhat_j); requires zhat_j < 1.
    double raw(Eigen::Index i, Eigen::Index j, double p) const;

    const Eigen::MatrixXd& values() const { return values_; }
    double dt() const { return dt_; }
    double dz() const { return dz_; }
    Eigen::Index n_time() const { return values_.rows() - 1; }
    Eigen::Index n_space() const { return values_.cols() - 1; }

    /// Binary cache: magic, key, dimensions, steps, then row-major values.
    void save(const std::string& path, std::uint64_t key) const;
    /// Returns false when the file is missing or was written for another key.
    bool load(const std::string& path, std::uint64_t key);

private:
    Eigen::MatrixXd values_;
    double dt_ = 0;
    double dz_ = 0;
};

/// FNV-1a over the parameters and grid configuration that determine a KernelTable.
std::uint64_t kernel_cache_key(const DerivedConstants& k, GridMethod method, int grid_size, int n_time,
                               int n_space, double dt);

} // namespace illiquid
