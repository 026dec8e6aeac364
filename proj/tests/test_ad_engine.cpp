#include <doctest.h>

#include <random>

#include "ptycho/gradcheck.hpp"
#include "ptycho/model.hpp"
#include "test_util.hpp"

using namespace ptycho;

namespace {

// Small multi-wavelength instance with fractional scan positions (kept away
// from half-pixel rounding boundaries so finite differences stay on one
// integer window).
ModelState<double> make_state(int n, int L, int M, int N, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const double pitch = 5e-6;
    const double z = 88e-3;
    std::vector<double> lambdas;
    for (int l = 0; l < L; ++l) lambdas.push_back(17.30e-9 * (1.0 + 0.036 * l));
    const Grid pg = make_grid(n, n, pitch, pitch);
    const double det_pitch = 0.9 * lambdas[0] * z / (n * pitch);

    std::vector<Eigen::Vector2d> pos = {{0.3 * pitch, -0.23 * pitch},
                                        {1.37 * pitch, 0.52 * pitch},
                                        {-0.83 * pitch, 1.19 * pitch},
                                        {0.11 * pitch, -1.47 * pitch}};
    ScanTable scan = make_scan_table(pos, {});
    const Grid og = object_grid_for(scan, pg);

    ModelState<double> st;
    st.probe = make_modal_stack<double>(pg, lambdas, M);
    st.object = make_modal_stack<double>(og, lambdas, N);
    for (auto& f : st.probe.fields) f = testutil::random_complex<double>(n, n, rng());
    for (auto& f : st.object.fields) f = testutil::random_complex<double>(og.ny, og.nx, rng());
    for (const auto& s : pos) st.positions.push_back(s);
    st.powers = {1.3, 0.9, 1.1, 1.05};
    st.wavelengths = lambdas;
    st.distance = z;
    st.background_root = RArr<double>(testutil::random_real<double>(n, n, rng()).abs() * 0.3 + 0.05);
    st.det_grid = make_grid(n, n, det_pitch, det_pitch);
    st.validate();
    return st;
}

Dataset<double> make_data_from(const ModelState<double>& truth, std::uint64_t seed,
                               bool with_masks) {
    std::mt19937_64 rng(seed);
    Dataset<double> d;
    d.det_grid = truth.det_grid;
    d.distance = double(truth.distance);
    d.wavelengths = std::vector<double>(truth.wavelengths.begin(), truth.wavelengths.end());
    for (int k = 0; k < truth.shots(); ++k) {
        d.scan.positions.push_back(Eigen::Vector2d(truth.positions[std::size_t(k)]));
        d.scan.powers.push_back(double(truth.powers[std::size_t(k)]));
        d.patterns.push_back(predict_pattern(truth, k));
        if (with_masks) {
            MaskArr m = MaskArr::Constant(d.det_grid.ny, d.det_grid.nx, 1);
            for (int j = 0; j < d.det_grid.pixels() / 10; ++j)
                m(int(rng() % std::uint64_t(d.det_grid.ny)),
                  int(rng() % std::uint64_t(d.det_grid.nx))) = 0;
            d.masks.push_back(m);
        }
    }
    return d;
}

} // namespace

TEST_SUITE("ad-engine") {

TEST_CASE("scalar chain rule through raw tape nodes") {
    // h(g(x)) with g(x) = x^2, h(u) = 3u at x = 2: dL/dx = 12
    Tape<double> tape;
    const int idx = tape.fresh_id();
    const int idy = tape.fresh_id();
    const int idz = tape.fresh_id();
    const double x = 2.0;
    tape.push_node([&tape, idx, idy, x]() {
        if (const double* yb = tape.find_sadj(idy)) tape.sadj(idx) += 2.0 * x * (*yb);
    });
    tape.push_node([&tape, idy, idz]() {
        if (const double* zb = tape.find_sadj(idz)) tape.sadj(idy) += 3.0 * (*zb);
    });
    tape.sadj(idz) = 1.0;
    tape.backward();
    REQUIRE(tape.find_sadj(idx) != nullptr);
    CHECK(*tape.find_sadj(idx) == doctest::Approx(12.0));
}

TEST_CASE("adjoints accumulate when a variable feeds several nodes") {
    // L = x^2 + 3x at x = 2: dL/dx = 7
    Tape<double> tape;
    const int idx = tape.fresh_id();
    const int ida = tape.fresh_id();
    const int idb = tape.fresh_id();
    const double x = 2.0;
    tape.push_node([&tape, idx, ida, x]() {
        if (const double* ab = tape.find_sadj(ida)) tape.sadj(idx) += 2.0 * x * (*ab);
    });
    tape.push_node([&tape, idx, idb]() {
        if (const double* bb = tape.find_sadj(idb)) tape.sadj(idx) += 3.0 * (*bb);
    });
    tape.sadj(ida) = 1.0;
    tape.sadj(idb) = 1.0;
    tape.backward();
    CHECK(*tape.find_sadj(idx) == doctest::Approx(7.0));
}

TEST_CASE("a consumed tape refuses a second backward pass") {
    Tape<double> tape;
    tape.push_node([]() {});
    tape.backward();
    CHECK_THROWS_AS(tape.backward(), InternalConsistencyError);
}

TEST_CASE("nonlinear adjoint rules match finite differences on 8x8 blocks") {
    std::mt19937_64 rng(41);
    const CArr<double> x = testutil::random_complex<double>(8, 8, rng());
    const RArr<double> W = RArr<double>(testutil::random_real<double>(8, 8, rng()).abs() + 0.1);
    const double h = 1e-3; // all three objectives are quadratic: central FD is exact

    SUBCASE("modulus squared: d(sum W |x|^2)/dconj(x) = W x") {
        const auto L = [&](const CArr<double>& v) { return (W * v.abs2()).sum(); };
        for (int t = 0; t < 12; ++t) {
            const int r = int(rng() % 8), c = int(rng() % 8);
            CArr<double> v = x;
            v(r, c) = x(r, c) + h;
            const double lpr = L(v);
            v(r, c) = x(r, c) - h;
            const double lmr = L(v);
            v(r, c) = x(r, c) + Cpx<double>(0, h);
            const double lpi = L(v);
            v(r, c) = x(r, c) - Cpx<double>(0, h);
            const double lmi = L(v);
            const Cpx<double> fd((lpr - lmr) / (2 * h), (lpi - lmi) / (2 * h));
            const Cpx<double> ad = W(r, c) * x(r, c);
            CHECK(std::abs(ad - 0.5 * fd) / (std::abs(ad) + 1e-12) < 1e-6);
        }
    }
    SUBCASE("pointwise product: d(sum |a b|^2)/dconj(a) = a |b|^2") {
        const CArr<double> b = testutil::random_complex<double>(8, 8, rng());
        const auto L = [&](const CArr<double>& a) { return (a * b).abs2().sum(); };
        for (int t = 0; t < 12; ++t) {
            const int r = int(rng() % 8), c = int(rng() % 8);
            CArr<double> v = x;
            v(r, c) = x(r, c) + h;
            const double lpr = L(v);
            v(r, c) = x(r, c) - h;
            const double lmr = L(v);
            v(r, c) = x(r, c) + Cpx<double>(0, h);
            const double lpi = L(v);
            v(r, c) = x(r, c) - Cpx<double>(0, h);
            const double lmi = L(v);
            const Cpx<double> fd((lpr - lmr) / (2 * h), (lpi - lmi) / (2 * h));
            const Cpx<double> ad = x(r, c) * std::norm(b(r, c));
            CHECK(std::abs(ad - 0.5 * fd) / (std::abs(ad) + 1e-12) < 1e-6);
        }
    }
    SUBCASE("squared background: d(sum W b^2)/db = 2 W b") {
        const RArr<double> b0 = testutil::random_real<double>(8, 8, rng());
        const auto L = [&](const RArr<double>& b) { return (W * b * b).sum(); };
        for (int t = 0; t < 12; ++t) {
            const int r = int(rng() % 8), c = int(rng() % 8);
            RArr<double> v = b0;
            v(r, c) = b0(r, c) + h;
            const double lp = L(v);
            v(r, c) = b0(r, c) - h;
            const double lm = L(v);
            const double fd = (lp - lm) / (2 * h);
            const double ad = 2.0 * W(r, c) * b0(r, c);
            CHECK(std::abs(ad - fd) / (std::abs(ad) + 1e-12) < 1e-6);
        }
    }
}

TEST_CASE("full-model gradients match finite differences for all seven roles") {
    ModelState<double> st = make_state(12, 2, 2, 1, 51);
    const Dataset<double> data = make_data_from(make_state(12, 2, 2, 1, 52), 53, true);
    LossConfig loss;
    loss.kind = LossKind::AmplitudeMse;
    loss.l1_amplitude = 1e-3;
    loss.tv_amplitude = 5e-4;
    GradcheckConfig cfg;
    cfg.array_samples = 24;
    cfg.seed = 99;
    const GradcheckReport rep = gradcheck(st, data, loss, cfg);
    REQUIRE(rep.entries.size() == 7);
    for (const auto& e : rep.entries) {
        INFO(std::string(role_name(e.role)) << " max rel err " << e.max_rel_err);
        CHECK(e.max_rel_err < 1e-6);
    }
}

TEST_CASE("quadratic objective makes central differences exact to roundoff") {
    // With measured = 0 the Poisson objective is just sum(I), which is
    // quadratic in probe, object, power, and background; central FD has no
    // truncation error there.
    ModelState<double> st = make_state(12, 2, 2, 1, 61);
    Dataset<double> data = make_data_from(st, 62, false);
    for (auto& p : data.patterns) p.setZero();
    LossConfig loss;
    loss.kind = LossKind::Poisson;
    GradcheckConfig cfg;
    cfg.roles = {Role::Probe, Role::Object, Role::Power, Role::Background};
    cfg.array_samples = 16;
    cfg.seed = 7;
    // no truncation error, so large steps push the roundoff floor down
    cfg.step_field = 3e-2;
    cfg.step_power = 3e-2;
    cfg.step_background = 3e-2;
    const GradcheckReport rep = gradcheck(st, data, loss, cfg);
    for (const auto& e : rep.entries) {
        INFO(std::string(role_name(e.role)) << " max rel err " << e.max_rel_err);
        CHECK(e.max_rel_err < 1e-8);
    }
}

TEST_CASE("object gradient support is the union of padded scan windows") {
    ModelState<double> st = make_state(12, 1, 1, 1, 71);
    Dataset<double> data = make_data_from(make_state(12, 1, 1, 1, 72), 73, false);
    LossConfig loss;
    loss.kind = LossKind::AmplitudeMse;
    const GradientSet<double> G = detail::batch_gradients(st, data, loss);

    const Grid& og = st.object.grid;
    const Grid& pg = st.probe.grid;
    MaskArr padded = MaskArr::Zero(og.ny, og.nx);
    for (int k = 0; k < st.shots(); ++k) {
        const detail::ShiftGeom geom =
            detail::shift_geometry<double>(og, pg, st.positions[std::size_t(k)], k);
        padded.block(geom.y0, geom.x0, geom.npy, geom.npx).setConstant(1);
    }
    int inside_nonzero = 0;
    for (Eigen::Index r = 0; r < og.ny; ++r)
        for (Eigen::Index c = 0; c < og.nx; ++c) {
            if (!padded(r, c)) {
                CHECK(std::abs(G.object[0](r, c)) == 0.0);
            } else if (std::abs(G.object[0](r, c)) > 0) {
                ++inside_nonzero;
            }
        }
    // fractional shifts interpolate, so the window interior genuinely
    // participates almost everywhere
    CHECK(inside_nonzero > pg.nx * pg.ny);
}

TEST_CASE("padded-window fringe entries still match finite differences") {
    // Entries inside the padded window but outside the probe-sized crop act
    // only through the interpolation tails; with a quadratic objective the
    // check is limited by roundoff alone.
    ModelState<double> st = make_state(12, 1, 1, 1, 81);
    Dataset<double> data = make_data_from(st, 82, false);
    for (auto& p : data.patterns) p.setZero();
    LossConfig loss;
    loss.kind = LossKind::Poisson;
    const GradientSet<double> G = detail::batch_gradients(st, data, loss);

    const auto eval = [&]() { return detail::total_loss(st, data, loss); };
    const Grid& og = st.object.grid;
    const Grid& pg = st.probe.grid;
    // union of crop footprints
    MaskArr crop = MaskArr::Zero(og.ny, og.nx);
    MaskArr padded = MaskArr::Zero(og.ny, og.nx);
    for (int k = 0; k < st.shots(); ++k) {
        const detail::ShiftGeom geom =
            detail::shift_geometry<double>(og, pg, st.positions[std::size_t(k)], k);
        crop.block(geom.y0 + geom.npy / 2 - pg.cy(), geom.x0 + geom.npx / 2 - pg.cx(), pg.ny,
                   pg.nx)
            .setConstant(1);
        padded.block(geom.y0, geom.x0, geom.npy, geom.npx).setConstant(1);
    }
    std::mt19937_64 rng(5);
    int tested = 0;
    const double h = 1e-3; // objective is quadratic here, no truncation cost
    while (tested < 6) {
        const Eigen::Index r = Eigen::Index(rng() % std::uint64_t(og.ny));
        const Eigen::Index c = Eigen::Index(rng() % std::uint64_t(og.nx));
        if (!padded(r, c) || crop(r, c)) continue;
        CArr<double>& f = st.object.fields[0];
        const Cpx<double> keep = f(r, c);
        f(r, c) = keep + h;
        const double lpr = eval();
        f(r, c) = keep - h;
        const double lmr = eval();
        f(r, c) = keep + Cpx<double>(0, h);
        const double lpi = eval();
        f(r, c) = keep - Cpx<double>(0, h);
        const double lmi = eval();
        f(r, c) = keep;
        const Cpx<double> fd((lpr - lmr) / (2 * h), (lpi - lmi) / (2 * h));
        const Cpx<double> ad = G.object[0](r, c);
        CHECK(std::abs(ad - 0.5 * fd) / (std::abs(0.5 * fd) + 1e-12) < 1e-5);
        ++tested;
    }
}

TEST_CASE("non-finite forward values abort the check with a numerical failure") {
    ModelState<double> st = make_state(12, 1, 1, 1, 91);
    const Dataset<double> data = make_data_from(st, 92, false);
    st.probe.fields[0](3, 4) = Cpx<double>(std::numeric_limits<double>::quiet_NaN(), 0.0);
    LossConfig loss;
    GradcheckConfig cfg;
    cfg.roles = {Role::Probe};
    cfg.array_samples = 2;
    try {
        gradcheck(st, data, loss, cfg);
        FAIL("expected NumericalFailureError");
    } catch (const NumericalFailureError& e) {
        CHECK(std::string(e.what()).find("shot") != std::string::npos);
    }
}

TEST_CASE("tape accounting reports live bytes and releases them on destruction") {
    ModelState<double> st = make_state(12, 2, 2, 1, 95);
    const std::int64_t before = MemoryMeter::live();
    {
        Tape<double> tape;
        ShotGraph<double> g = predict_pattern(st, 0, &tape);
        CHECK(tape.nodes() == 5);
        CHECK(tape.bytes() > 0);
        CHECK(MemoryMeter::live() >= before + tape.bytes());
        tape.radj(g.id_intensity, st.det_grid.ny, st.det_grid.nx).setConstant(1.0);
        tape.backward();
        CHECK(MemoryMeter::peak() >= MemoryMeter::live());
    }
    CHECK(MemoryMeter::live() == before);
}

} // TEST_SUITE
