#include "illiquid/error.hpp"
#include "illiquid/gauss.hpp"
#include "illiquid/hjb.hpp"

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <random>

using namespace illiquid;

namespace {

DerivedConstants constants(double gamma, double rho = 0.0)
{
    ModelParams m;
    m.gamma = gamma;
    m.rho = rho;
    return hjb_constants(m);
}

double moment(const GaussGrid& g, int k)
{
    return g.expect([k](double x) { return std::pow(x, k); });
}

} // namespace

TEST_SUITE("gauss")
{
    TEST_CASE("two-point Hermite rule")
    {
        const GaussGrid g = build_grid(2);
        REQUIRE(g.size() == 2);
        CHECK(std::abs(g.nodes[0]) == doctest::Approx(1.0));
        CHECK(std::abs(g.nodes[1]) == doctest::Approx(1.0));
        CHECK(g.weights[0] == doctest::Approx(0.5));
        CHECK(g.weights[1] == doctest::Approx(0.5));
    }

    TEST_CASE("grid moments")
    {
        for (GridMethod method : {GridMethod::GaussHermite, GridMethod::Quantizer}) {
            for (int n : {5, 32, 64, 200}) {
                const GaussGrid g = build_grid(n, method);
                INFO(to_string(method), " n=", n);
                CHECK(g.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
                CHECK((g.weights.array() > 0).all());
                CHECK(std::abs(moment(g, 1)) < 1e-8);
                // a quantizer underestimates the variance by its distortion, about 2.72 / n^2
                const double var_tol = method == GridMethod::GaussHermite ? 1e-6 : 3.0 / (n * n) + 1e-6;
                CHECK(std::abs(moment(g, 2) - 1.0) < std::max(var_tol, 1e-6));
            }
        }
        const GaussGrid g = build_grid(101);
        CHECK(moment(g, 4) == doctest::Approx(3.0).epsilon(1e-6));
    }

    TEST_CASE("quantizer is stationary")
    {
        // Lloyd condition: every node is the conditional mean of its Voronoi cell
        const GaussGrid g = build_grid(20, GridMethod::Quantizer);
        auto pdf = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * M_PI); };
        auto cdf = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            const double a = i == 0 ? -INFINITY : 0.5 * (g.nodes[i - 1] + g.nodes[i]);
            const double b = i + 1 == g.size() ? INFINITY : 0.5 * (g.nodes[i] + g.nodes[i + 1]);
            const double mass = cdf(b) - cdf(a);
            const double mean = (pdf(a) - pdf(b)) / mass;
            CHECK(g.weights[i] == doctest::Approx(mass).epsilon(1e-9));
            CHECK(g.nodes[i] == doctest::Approx(mean).epsilon(1e-8));
        }
    }

    TEST_CASE("invalid grid size")
    {
        CHECK_THROWS_AS(build_grid(1), ValidationError);
    }

    TEST_CASE("lognormal moment")
    {
        CHECK(lognormal_moment(0.2, 1.0, 0.0, 0.5) == 1.0);
        CHECK(lognormal_moment(0.2, 0.0, 2.0, 0.5) == doctest::Approx(std::exp(0.2)));
        const double v = lognormal_moment(0.2, 1.0, 1.0, 0.5);
        CHECK(v == doctest::Approx(0.97531).epsilon(1e-5));

        std::mt19937_64 rng(3);
        std::normal_distribution<double> n01;
        double acc = 0;
        const int n = 10000000;
        for (int i = 0; i < n; ++i) acc += std::exp(0.5 * ((0.2 - 0.5) + n01(rng)));
        CHECK(acc / n == doctest::Approx(v).epsilon(1e-3));
    }

    TEST_CASE("f_gamma examples")
    {
        const DerivedConstants k0 = constants(0.0);
        const GaussGrid g = build_grid(64);
        for (double z : {0.0, 0.3, 2.0, 10.0}) CHECK(f_gamma(0.0, z, k0, g) == doctest::Approx(std::pow(1 + z, 0.5)));
        const DerivedConstants k1 = constants(1.0);
        for (double t : {0.5, 3.0})
            for (double z : {0.0, 1.0, 5.0}) CHECK(f_gamma(t, z, k1, g) == doctest::Approx(std::pow(1 + z, 0.5)));
    }

    TEST_CASE("f_gamma at z = 0 against the lognormal moment")
    {
        const DerivedConstants k = constants(0.0);
        const GaussGrid hermite = build_grid(64);
        const GaussGrid quant = build_grid(5000, GridMethod::Quantizer);
        for (double t = 0; t <= 5.0 + 1e-12; t += 0.25) {
            const double exact = lognormal_moment(k.b_J, k.sigma_J, t, k.p);
            CHECK(std::abs(f_gamma(t, 0.0, k, hermite) - exact) < 1e-6);
            CHECK(std::abs(f_gamma(t, 0.0, k, quant) - exact) < 1e-6);
        }
    }

    TEST_CASE("f_gamma growth bound, monotonicity and concavity")
    {
        const GaussGrid g = build_grid(64);
        for (double gamma : {0.0, 0.5}) {
            const DerivedConstants k = constants(gamma, 0.3);
            for (double t : {0.1, 1.0, 4.0}) {
                double prev = -1, prev_slope = INFINITY;
                const double h = 0.05;
                for (int i = 0; i <= 200; ++i) {
                    const double z = i * h;
                    const double f = f_gamma(t, z, k, g);
                    CHECK(f <= std::exp(k.k_Jp * t) * std::pow(1 + z, k.p) * (1 + 1e-12));
                    CHECK(f >= 0);
                    if (prev >= 0) {
                        const double slope = (f - prev) / h;
                        CHECK(slope >= 0);
                        CHECK(slope <= prev_slope + 1e-12);
                        prev_slope = slope;
                    }
                    prev = f;
                }
            }
        }
    }

    TEST_CASE("expectation operator properties")
    {
        const DerivedConstants k = constants(0.0);
        const GaussGrid g = build_grid(64);
        const double t = 1.3;
        // linearity and the geometric mean of J
        CHECK(g_operator([](double r) { return r; }, t, 0.7, 0.4, k, g) ==
              doctest::Approx(0.7 + 0.4 * std::exp(k.b_J * t)).epsilon(1e-10));
        // homogeneity of power functions
        auto power = [&](double r) { return std::pow(r, k.p); };
        for (double xi : {0.1, 3.0, 17.0}) {
            const double lhs = g_operator(power, t, xi * 0.7, xi * 0.4, k, g);
            const double rhs = std::pow(xi, k.p) * g_operator(power, t, 0.7, 0.4, k, g);
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-13));
        }
        // concave nondecreasing psi stays nondecreasing and concave along segments
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> u(0.01, 3.0);
        for (auto psi : {std::function<double(double)>([](double r) { return std::sqrt(r); }),
                         std::function<double(double)>([](double r) { return std::log1p(r); }),
                         std::function<double(double)>([](double r) { return std::min(r, 1.0 + 0.2 * r); })}) {
            for (int trial = 0; trial < 50; ++trial) {
                const double x = u(rng), y = u(rng), dx = u(rng), dy = u(rng);
                const double base = g_operator(psi, t, x, y, k, g);
                CHECK(g_operator(psi, t, x + dx, y, k, g) >= base);
                CHECK(g_operator(psi, t, x, y + dy, k, g) >= base);
                const double x2 = u(rng), y2 = u(rng);
                const double mid = g_operator(psi, t, 0.5 * (x + x2), 0.5 * (y + y2), k, g);
                CHECK(mid >= 0.5 * (base + g_operator(psi, t, x2, y2, k, g)) - 1e-12);
            }
        }
    }

    TEST_CASE("kernel table and cache")
    {
        const DerivedConstants k = constants(0.4, -0.2);
        const GaussGrid g = build_grid(32);
        const int n_time = 40, n_space = 20;
        const double dt = 0.05;
        const KernelTable table = KernelTable::build(k, g, n_time, n_space, dt);
        REQUIRE(table.n_time() == n_time);
        REQUIRE(table.n_space() == n_space);
        for (int j = 0; j <= n_space; ++j) CHECK(table.normalized(0, j) == doctest::Approx(1.0));
        for (int i = 0; i <= n_time; ++i) {
            CHECK(table.normalized(i, n_space) == doctest::Approx(1.0));
            const double t = i * dt;
            for (int j = 0; j < n_space; ++j) {
                const double z = from_compact(j * table.dz());
                CHECK(table.raw(i, j, k.p) == doctest::Approx(f_gamma(t, z, k, g)).epsilon(1e-12));
            }
        }

        const auto dir = std::filesystem::temp_directory_path() / "illiquid_kernel_test";
        std::filesystem::create_directories(dir);
        const std::string path = (dir / "kernel.bin").string();
        const std::uint64_t key = kernel_cache_key(k, GridMethod::GaussHermite, 32, n_time, n_space, dt);
        CHECK(key != kernel_cache_key(k, GridMethod::GaussHermite, 33, n_time, n_space, dt));
        CHECK(key != kernel_cache_key(k, GridMethod::Quantizer, 32, n_time, n_space, dt));
        table.save(path, key);
        KernelTable back;
        REQUIRE(back.load(path, key));
        CHECK(back.values() == table.values());
        CHECK(back.dt() == table.dt());
        KernelTable other;
        CHECK_FALSE(other.load(path, key + 1));
        CHECK_FALSE(other.load((dir / "missing.bin").string(), key));
        std::filesystem::remove_all(dir);
    }
}
