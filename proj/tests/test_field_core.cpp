#include <doctest.h>

#include "ptycho/field.hpp"
#include "test_util.hpp"

using namespace ptycho;

TEST_SUITE_BEGIN("field-core");

TEST_CASE("grid construction validates arguments") {
    CHECK_THROWS_AS(make_grid(0, 4, 1e-6, 1e-6), InvalidArgumentError);
    CHECK_THROWS_AS(make_grid(4, -1, 1e-6, 1e-6), InvalidArgumentError);
    CHECK_THROWS_AS(make_grid(4, 4, 0.0, 1e-6), InvalidArgumentError);
    CHECK_THROWS_AS(make_grid(4, 4, 1e-6, -2e-6), InvalidArgumentError);
    const Grid g = make_grid(6, 4, 2e-6, 3e-6);
    CHECK(g.cx() == 3);
    CHECK(g.cy() == 2);
    CHECK(g.pixels() == 24);
}

TEST_CASE("coordinate and frequency axes are centered at floor(n/2)") {
    const auto x = coord_axis<double>(4, 2.0);
    CHECK(x[0] == -4.0);
    CHECK(x[1] == -2.0);
    CHECK(x[2] == 0.0);
    CHECK(x[3] == 2.0);
    const auto f = freq_axis<double>(5, 0.5);
    CHECK(f[2] == 0.0);
    CHECK(f[4] == doctest::Approx(2.0 / 2.5).epsilon(1e-15));
    CHECK(f[0] == doctest::Approx(-2.0 / 2.5).epsilon(1e-15));
}

TEST_CASE("total power of a uniform unit field equals grid area") {
    const Grid g = make_grid(32, 32, 5e-6, 5e-6);
    ComplexField<double> f(g, CArr<double>::Constant(32, 32, {1.0, 0.0}));
    CHECK(total_power(f) == doctest::Approx((32 * 5e-6) * (32 * 5e-6)).epsilon(1e-14));
}

TEST_CASE("unitary DFT preserves summed squared magnitude") {
    const Grid g = make_grid(16, 16, 3e-6, 3e-6);
    const CArr<double> f = testutil::random_complex<double>(16, 16, 11);
    const CArr<double> F = dft2c(f);
    // direct summation on both sides
    double pf = 0, pF = 0;
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c) {
            pf += std::norm(f(r, c));
            pF += std::norm(F(r, c));
        }
    CHECK(std::abs(pf - pF) / pf < 1e-12);
    // same statement through total_power with the grid held fixed
    CHECK(total_power(ComplexField<double>(g, F)) ==
          doctest::Approx(total_power(ComplexField<double>(g, f))).epsilon(1e-12));
}

TEST_CASE("modal stack shape and intensity accumulation") {
    CHECK_THROWS_AS(make_modal_stack<double>(make_grid(4, 4, 1e-6, 1e-6), {}, 1),
                    InvalidArgumentError);
    CHECK_THROWS_AS(make_modal_stack<double>(make_grid(4, 4, 1e-6, 1e-6), {1e-8, -1e-8}, 1),
                    InvalidArgumentError);
    CHECK_THROWS_AS(make_modal_stack<double>(make_grid(4, 4, 1e-6, 1e-6), {1e-8}, 0),
                    InvalidArgumentError);
    auto s = make_modal_stack<double>(make_grid(2, 2, 1e-6, 1e-6), {17.30e-9, 17.93e-9}, 2);
    CHECK(s.fields.size() == 4);
    s.at(0, 0)(0, 0) = {3.0, 4.0};
    s.at(1, 1)(0, 0) = {1.0, 0.0};
    const RArr<double> I = incoherent_intensity(s);
    CHECK(I(0, 0) == doctest::Approx(26.0).epsilon(1e-15));
    CHECK(I(1, 1) == 0.0);
}

TEST_CASE("scan table defaults powers to one and checks sizes") {
    auto t = make_scan_table({{0.0, 0.0}, {1e-6, 2e-6}}, {});
    CHECK(t.shots() == 2);
    CHECK(t.powers[0] == 1.0);
    CHECK(t.powers[1] == 1.0);
    CHECK_THROWS_AS(make_scan_table({{0.0, 0.0}}, {1.0, 2.0}), InvalidArgumentError);
    CHECK_THROWS_AS(make_scan_table({}, {}), InvalidArgumentError);
}

TEST_CASE("ambiguity-free comparison is exactly 1 under phase and shift") {
    const CArr<double> a = testutil::random_complex<double>(32, 24, 7);
    // global phase plus integer circular shift
    CArr<double> b = roll2(a, 5, -3) * Cpx<double>(std::polar(1.0, 1.234));
    CHECK(compare_ambiguity_free(b, a) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(compare_ambiguity_free(a, a) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ambiguity-free comparison stays low for unrelated fields") {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const CArr<double> a = testutil::random_complex<double>(64, 64, 1000 + seed);
        const CArr<double> b = testutil::random_complex<double>(64, 64, 5000 + seed);
        worst = std::max(worst, compare_ambiguity_free(a, b));
    }
    CHECK(worst < 0.2);
}

TEST_CASE("ambiguity-free comparison rejects zero-norm input") {
    const CArr<double> a = testutil::random_complex<double>(8, 8, 3);
    const CArr<double> z = CArr<double>::Zero(8, 8);
    CHECK_THROWS_AS((void)compare_ambiguity_free(a, z), UndefinedMetricError);
    CHECK_THROWS_AS((void)compare_ambiguity_free(z, a), UndefinedMetricError);
}

TEST_SUITE_END();
