#include <doctest.h>

#include "ptycho/fft.hpp"
#include "ptycho/nudft.hpp"
#include "test_util.hpp"

using namespace ptycho;

TEST_SUITE_BEGIN("fft");

TEST_CASE("roll2 wraps indices in both directions") {
    CArr<double> a(2, 3);
    a << Cpx<double>(0, 0), Cpx<double>(1, 0), Cpx<double>(2, 0), Cpx<double>(10, 0),
        Cpx<double>(11, 0), Cpx<double>(12, 0);
    const CArr<double> r = roll2(a, 1, -1);
    CHECK(r(0, 0).real() == 12.0); // a[(0+1) mod 2][(0-1) mod 3]
    CHECK(r(0, 1).real() == 10.0);
    CHECK(r(1, 2).real() == 1.0);
}

TEST_CASE("raw 1D transforms match a naive DFT for power-of-two and odd lengths") {
    for (int n : {8, 7, 12, 13}) {
        std::vector<Cpx<double>> x(n);
        std::mt19937_64 rng(42 + std::uint64_t(n));
        std::normal_distribution<double> g(0, 1);
        for (auto& v : x) v = {g(rng), g(rng)};
        std::vector<Cpx<double>> ref(n, {0, 0});
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i)
                ref[j] += x[i] * std::polar(1.0, -2.0 * kPi * i * j / n);
        std::vector<Cpx<double>> fwd = x;
        fft_raw(fwd.data(), n, false);
        double worst = 0;
        for (int j = 0; j < n; ++j) worst = std::max(worst, std::abs(fwd[j] - ref[j]));
        CHECK(worst < 1e-12 * n);
        // inverse undoes forward up to the length factor
        std::vector<Cpx<double>> back = fwd;
        fft_raw(back.data(), n, true);
        worst = 0;
        for (int i = 0; i < n; ++i) worst = std::max(worst, std::abs(back[i] / double(n) - x[i]));
        CHECK(worst < 1e-12 * n);
    }
}

TEST_CASE("centered DFT of a centered impulse is flat") {
    const int n = 16;
    CArr<double> f = CArr<double>::Zero(n, n);
    f(n / 2, n / 2) = {1.0, 0.0};
    const CArr<double> F = dft2c(f);
    CHECK(testutil::max_abs_diff(F, CArr<double>(CArr<double>::Constant(n, n, {1.0 / n, 0.0}))) <
          1e-14);
}

TEST_CASE("centered DFT of a uniform field concentrates at the center pixel") {
    const int n = 32;
    const CArr<double> f = CArr<double>::Constant(n, n, {1.0, 0.0});
    CArr<double> F = dft2c(f);
    CHECK(std::abs(F(n / 2, n / 2) - Cpx<double>(n, 0)) < 1e-11);
    F(n / 2, n / 2) = {0.0, 0.0};
    CHECK(F.abs().maxCoeff() < 1e-11);
}

TEST_CASE("centered unitary DFT round-trips") {
    for (auto [ny, nx] : {std::pair{16, 16}, std::pair{12, 20}, std::pair{9, 7}}) {
        const CArr<double> f = testutil::random_complex<double>(ny, nx, 5);
        CHECK(testutil::rel_err(idft2c(dft2c(f)), f) < 1e-12);
    }
}

TEST_CASE("circular shift maps to a centered linear phase") {
    const int n = 16;
    const int dy = 3, dx = 5;
    const CArr<double> f = testutil::random_complex<double>(n, n, 9);
    const CArr<double> fs = roll2(f, -dy, -dx); // fs[i] = f[i - d]
    const CArr<double> F = dft2c(f);
    CArr<double> expected(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c)
            expected(r, c) = F(r, c) * std::polar(1.0, -2.0 * kPi *
                                                           (double(dx) * (c - n / 2) / n +
                                                            double(dy) * (r - n / 2) / n));
    CHECK(testutil::rel_err(dft2c(fs), expected) < 1e-12);
}

TEST_CASE("centered DFT matches the brute-force oracle on its conjugate grid") {
    for (auto [ny, nx] : {std::pair{12, 12}, std::pair{16, 16}}) {
        const Grid g = make_grid(nx, ny, 4e-6, 6e-6);
        const CArr<double> f = testutil::random_complex<double>(ny, nx, 21);
        const CArr<double> F = dft2c(f);
        std::vector<double> fx, fy;
        for (int r = 0; r < ny; ++r)
            for (int c = 0; c < nx; ++c) {
                fx.push_back((c - g.cx()) / (nx * g.px));
                fy.push_back((r - g.cy()) / (ny * g.py));
            }
        const CVec<double> ref = nudft2(f, g, fx, fy, 1.0 / std::sqrt(double(nx) * ny));
        double worst = 0;
        std::size_t k = 0;
        for (int r = 0; r < ny; ++r)
            for (int c = 0; c < nx; ++c) worst = std::max(worst, std::abs(F(r, c) - ref[k++]));
        CHECK(worst < 1e-11);
    }
}

TEST_CASE("transform is linear") {
    const CArr<double> f = testutil::random_complex<double>(8, 8, 31);
    const CArr<double> h = testutil::random_complex<double>(8, 8, 32);
    const Cpx<double> a(1.7, -0.3);
    const CArr<double> lhs = dft2c(CArr<double>(a * f + h));
    const CArr<double> rhs = a * dft2c(f) + dft2c(h);
    CHECK(testutil::max_abs_diff(lhs, CArr<double>(rhs)) < 1e-12);
}

TEST_SUITE_END();
