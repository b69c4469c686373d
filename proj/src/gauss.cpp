#include "illiquid/gauss.hpp"

#include "illiquid/error.hpp"
#include "illiquid/hash.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <vector>

namespace illiquid {

std::string to_string(GridMethod method)
{
    return method == GridMethod::GaussHermite ? "gauss-hermite" : "quantizer";
}

GridMethod grid_method_from_string(const std::string& name)
{
    if (name == "gauss-hermite" || name == "hermite") return GridMethod::GaussHermite;
    if (name == "quantizer" || name == "quantization") return GridMethod::Quantizer;
    throw ValidationError("unknown grid method '" + name + "' (expected gauss-hermite or quantizer)");
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_pdf(double x) { return std::isinf(x) ? 0.0 : kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

// P(a < X < b) without cancellation in either tail.
double normal_mass(double a, double b)
{
    if (a >= 0.0) return 0.5 * (std::erfc(a * kInvSqrt2) - std::erfc(b * kInvSqrt2));
    if (b <= 0.0) return 0.5 * (std::erfc(-b * kInvSqrt2) - std::erfc(-a * kInvSqrt2));
    return 1.0 - 0.5 * std::erfc(-a * kInvSqrt2) - 0.5 * std::erfc(b * kInvSqrt2);
}

double normal_quantile(double u)
{
    // bisection bracket then Newton polish; only used to seed the quantizer
    double lo = -40.0;
    double hi = 40.0;
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (normal_cdf(mid) < u ? lo : hi) = mid;
    }
    double x = 0.5 * (lo + hi);
    for (int it = 0; it < 3; ++it) {
        const double pdf = normal_pdf(x);
        if (pdf < 1e-300) break;
        x -= (normal_cdf(x) - u) / pdf;
    }
    return x;
}

GaussGrid gauss_hermite(int n)
{
    if (n > 512) throw ValidationError("gauss-hermite grids are limited to N <= 512 (weights underflow beyond)");
    // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite recurrence
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
    for (int k = 1; k < n; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(J);
    if (eig.info() != Eigen::Success) throw NumericalError("gauss-hermite eigenproblem failed");

    GaussGrid grid;
    grid.method = GridMethod::GaussHermite;
    grid.nodes = eig.eigenvalues();
    grid.weights = eig.eigenvectors().row(0).transpose().array().square();
    // symmetric by construction; tidy the rounding
    for (int i = 0; i < n / 2; ++i) {
        const double x = 0.5 * (grid.nodes[n - 1 - i] - grid.nodes[i]);
        const double w = 0.5 * (grid.weights[i] + grid.weights[n - 1 - i]);
        grid.nodes[i] = -x, grid.nodes[n - 1 - i] = x;
        grid.weights[i] = grid.weights[n - 1 - i] = w;
    }
    if (n % 2) grid.nodes[n / 2] = 0.0;
    grid.weights /= grid.weights.sum();
    return grid;
}

GaussGrid quantizer(int n)
{
    using Eigen::VectorXd;
    const Eigen::Index N = n;
    VectorXd x(N);
    // Asymptotically optimal point density is proportional to phi^{1/3}: N(0, 3) quantiles.
    for (Eigen::Index i = 0; i < N; ++i) x[i] = std::sqrt(3.0) * normal_quantile((i + 0.5) / N);

    const double inf = std::numeric_limits<double>::infinity();
    VectorXd mass(N), centroid(N), da(N), db(N);
    auto centroids = [&](const VectorXd& pts) {
        for (Eigen::Index i = 0; i < N; ++i) {
            const double a = i == 0 ? -inf : 0.5 * (pts[i - 1] + pts[i]);
            const double b = i == N - 1 ? inf : 0.5 * (pts[i] + pts[i + 1]);
            mass[i] = normal_mass(a, b);
            centroid[i] = (normal_pdf(a) - normal_pdf(b)) / mass[i];
            da[i] = std::isinf(a) ? 0.0 : normal_pdf(a) * (centroid[i] - a) / mass[i];
            db[i] = std::isinf(b) ? 0.0 : normal_pdf(b) * (b - centroid[i]) / mass[i];
        }
    };

    constexpr int max_iters = 200;
    VectorXd lower(N), diag(N), upper(N), rhs(N), step(N);
    int iter = 0;
    double residual = inf;
    for (; iter < max_iters; ++iter) {
        centroids(x);
        rhs = x - centroid;
        const double previous = residual;
        residual = rhs.cwiseAbs().maxCoeff();
        if (residual < 1e-13) break;
        // narrow cells lose digits in the centroid difference; stop once Newton stalls
        if (residual < 1e-9 && residual > 0.5 * previous) break;
        // tridiagonal Jacobian of x - centroid(x)
        for (Eigen::Index i = 0; i < N; ++i) {
            lower[i] = -0.5 * da[i];
            upper[i] = -0.5 * db[i];
            diag[i] = 1.0 - 0.5 * (da[i] + db[i]);
        }
        // Thomas algorithm
        VectorXd c(N), d(N);
        c[0] = upper[0] / diag[0];
        d[0] = rhs[0] / diag[0];
        for (Eigen::Index i = 1; i < N; ++i) {
            const double den = diag[i] - lower[i] * c[i - 1];
            c[i] = upper[i] / den;
            d[i] = (rhs[i] - lower[i] * d[i - 1]) / den;
        }
        step[N - 1] = d[N - 1];
        for (Eigen::Index i = N - 2; i >= 0; --i) step[i] = d[i] - c[i] * step[i + 1];

        // damped so that the points stay ordered; fall back to a plain Lloyd step
        double scale = 1.0;
        VectorXd trial = x - step;
        while (scale > 1e-3) {
            bool ordered = true;
            for (Eigen::Index i = 1; i < N && ordered; ++i) ordered = trial[i] > trial[i - 1];
            if (ordered && trial.allFinite()) break;
            scale *= 0.5;
            trial = x - scale * step;
        }
        x = scale > 1e-3 ? trial : VectorXd(centroid);
    }
    if (iter == max_iters)
        throw NumericalError("quantizer did not converge after " + std::to_string(max_iters) +
                             " iterations (residual " + std::to_string(residual) + ")");

    GaussGrid grid;
    grid.method = GridMethod::Quantizer;
    grid.nodes = centroid;
    grid.weights = mass / mass.sum();
    return grid;
}

} // namespace

GaussGrid build_grid(int n, GridMethod method)
{
    if (n < 2) throw ValidationError("Gaussian grid needs N >= 2");
    return method == GridMethod::GaussHermite ? gauss_hermite(n) : quantizer(n);
}

double f_gamma(double t, double z, const DerivedConstants& k, const GaussGrid& grid)
{
    return grid.expect([&](double x) { return pow_nonneg(z + j_factor(k, t, x), k.p); });
}

double f_gamma_normalized(double t, double zhat, const DerivedConstants& k, const GaussGrid& grid)
{
    const double s = 1.0 - zhat;
    return grid.expect([&](double x) { return pow_nonneg(zhat + s * j_factor(k, t, x), k.p); });
}

KernelTable KernelTable::build(const DerivedConstants& k, const GaussGrid& grid, int n_time, int n_space, double dt)
{
    const double dz = 1.0 / n_space;
    Eigen::MatrixXd values(n_time + 1, n_space + 1);
    Eigen::VectorXd jv(grid.size());
    for (int i = 0; i <= n_time; ++i) {
        const double t = i * dt;
        for (Eigen::Index q = 0; q < grid.size(); ++q) jv[q] = j_factor(k, t, grid.nodes[q]);
        for (int j = 0; j <= n_space; ++j) {
            const double zhat = j * dz;
            const double s = 1.0 - zhat;
            double acc = 0.0;
            for (Eigen::Index q = 0; q < grid.size(); ++q) acc += grid.weights[q] * pow_nonneg(zhat + s * jv[q], k.p);
            values(i, j) = acc;
        }
        values(i, n_space) = 1.0;
    }
    return KernelTable(std::move(values), dt, dz);
}

double KernelTable::raw(Eigen::Index i, Eigen::Index j, double p) const
{
    const double s = 1.0 - static_cast<double>(j) * dz_;
    return values_(i, j) / std::pow(s, p);
}

namespace {

constexpr std::array<char, 8> kMagic{'I', 'L', 'Q', 'K', 'E', 'R', 'N', '1'};


} // namespace

std::uint64_t kernel_cache_key(const DerivedConstants& k, GridMethod method, int grid_size, int n_time,
                               int n_space, double dt)
{
    Fnv1a f;
    f.value(k.b_J);
    f.value(k.sigma_J);
    f.value(k.p);
    f.value(static_cast<int>(method));
    f.value(grid_size);
    f.value(n_time);
    f.value(n_space);
    f.value(dt);
    return f.h;
}

void KernelTable::save(const std::string& path, std::uint64_t key) const
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write kernel cache " + path);
    const std::int64_t rows = values_.rows();
    const std::int64_t cols = values_.cols();
    out.write(kMagic.data(), kMagic.size());
    out.write(reinterpret_cast<const char*>(&key), sizeof key);
    out.write(reinterpret_cast<const char*>(&rows), sizeof rows);
    out.write(reinterpret_cast<const char*>(&cols), sizeof cols);
    out.write(reinterpret_cast<const char*>(&dt_), sizeof dt_);
    out.write(reinterpret_cast<const char*>(&dz_), sizeof dz_);
    // Eigen is column-major; write rows contiguously
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = values_;
    out.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
}

bool KernelTable::load(const std::string& path, std::uint64_t key)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    std::array<char, 8> magic{};
    std::uint64_t stored = 0;
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    in.read(magic.data(), magic.size());
    in.read(reinterpret_cast<char*>(&stored), sizeof stored);
    in.read(reinterpret_cast<char*>(&rows), sizeof rows);
    in.read(reinterpret_cast<char*>(&cols), sizeof cols);
    if (!in || magic != kMagic || stored != key || rows <= 0 || cols <= 0) return false;
    double dt = 0;
    double dz = 0;
    in.read(reinterpret_cast<char*>(&dt), sizeof dt);
    in.read(reinterpret_cast<char*>(&dz), sizeof dz);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
    in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(sizeof(double) * rm.size()));
    if (!in) return false;
    values_ = rm;
    dt_ = dt;
    dz_ = dz;
    return true;
}

} // namespace illiquid
