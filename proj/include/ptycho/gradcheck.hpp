#pragma once

// Finite-difference verification of the backward pass. Central differences
// on the total batch loss, with per-role step sizes scaled to each
// variable's magnitude. Complex entries are probed on the real and imaginary
// axes separately; under the conjugate-gradient convention the reference is
//   g_fd = (dL/dRe + i dL/dIm) / 2.
// Array roles are sampled (seeded) rather than swept so the check stays
// affordable; scalars are probed exhaustively.

#include <chrono>
#include <random>
#include <string>
#include <vector>

#include "ptycho/model.hpp"
#include "ptycho/objectives.hpp"

namespace ptycho {

struct GradcheckConfig {
    std::vector<Role> roles = {kAllRoles, kAllRoles + 7};
    int array_samples = 48;       // sampled entries per array-valued role
    int max_scalar_shots = 8;     // positions/powers probed for at most this many shots
    std::uint64_t seed = 7;
    // Central-difference steps balance truncation (h^2) against evaluation
    // roundoff (ulp(L)/2h); ~1e-4 of each variable's scale is near the
    // double-precision optimum for this model.
    double step_field = 1e-4;      // x RMS magnitude of the array
    double step_position = 1e-4;   // in pixels
    double step_power = 1e-5;      // relative
    double step_wavelength = 2e-7; // relative
    double step_distance = 2e-7;   // relative
    double step_background = 1e-4; // x (RMS + 1)
};

struct GradcheckEntry {
    Role role = Role::Probe;
    double max_rel_err = 0;
    double max_abs_err = 0;
    int samples = 0;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> entries;
    double worst = 0;
    double seconds = 0;

    const GradcheckEntry* find(Role r) const {
        for (const auto& e : entries)
            if (e.role == r) return &e;
        return nullptr;
    }
};

namespace detail {

template <class Real>
double total_loss(const ModelState<Real>& st, const Dataset<Real>& data, const LossConfig& cfg) {
    double acc = 0;
    RArr<Real> dI;
    for (int k = 0; k < st.shots(); ++k) {
        const RArr<Real> I = predict_pattern(st, k);
        if (!I.allFinite())
            throw NumericalFailureError("non-finite prediction at shot " + std::to_string(k));
        const MaskArr* mask = data.masks.empty() ? nullptr : &data.masks[std::size_t(k)];
        acc += double(loss_and_gradient(I, data.patterns[std::size_t(k)], mask, cfg, dI));
    }
    if (cfg.l1_amplitude > 0 || cfg.tv_amplitude > 0)
        acc += double(tv_l1_regularize<Real>(st.object, cfg.l1_amplitude, cfg.tv_amplitude,
                                             cfg.epsilon, nullptr));
    return acc;
}

template <class Real>
GradientSet<Real> batch_gradients(const ModelState<Real>& st, const Dataset<Real>& data,
                                  const LossConfig& cfg) {
    GradientSet<Real> G = GradientSet<Real>::zeros_like(st);
    for (int k = 0; k < st.shots(); ++k) {
        Tape<Real> tape;
        ShotGraph<Real> g = predict_pattern(st, k, &tape);
        RArr<Real> dI;
        const MaskArr* mask = data.masks.empty() ? nullptr : &data.masks[std::size_t(k)];
        loss_and_gradient(g.intensity, data.patterns[std::size_t(k)], mask, cfg, dI);
        tape.radj(g.id_intensity, dI.rows(), dI.cols()) = dI;
        tape.backward();
        harvest_gradients(tape, g, k, st, G);
    }
    if (cfg.l1_amplitude > 0 || cfg.tv_amplitude > 0)
        tv_l1_regularize<Real>(st.object, cfg.l1_amplitude, cfg.tv_amplitude, cfg.epsilon,
                               &G.object);
    return G;
}

template <class Real>
double rms_magnitude(const CArr<Real>& a) {
    return std::sqrt(double(a.abs2().sum()) / double(a.size()));
}

} // namespace detail

// Verifies the AD gradients of the summed shot loss for the requested roles.
template <class Real>
GradcheckReport gradcheck(ModelState<Real> st, const Dataset<Real>& data, const LossConfig& loss,
                          const GradcheckConfig& cfg) {
    st.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const GradientSet<Real> G = detail::batch_gradients(st, data, loss);
    std::mt19937_64 rng(cfg.seed);
    const auto eval = [&]() { return detail::total_loss(st, data, loss); };

    // Object entries outside every scan window have structurally zero
    // gradient; probing them would only measure evaluation noise. Sample the
    // object where at least one probe-sized window lands.
    std::vector<std::pair<Eigen::Index, Eigen::Index>> covered;
    {
        const Grid& og = st.object.grid;
        const Grid& pg = st.probe.grid;
        MaskArr cov = MaskArr::Zero(og.ny, og.nx);
        for (int k = 0; k < st.shots(); ++k) {
            const detail::ShiftGeom geom =
                detail::shift_geometry<Real>(og, pg, st.positions[std::size_t(k)], k);
            cov.block(geom.y0 + geom.npy / 2 - pg.cy(), geom.x0 + geom.npx / 2 - pg.cx(), pg.ny,
                      pg.nx)
                .setConstant(1);
        }
        for (Eigen::Index r = 0; r < cov.rows(); ++r)
            for (Eigen::Index c = 0; c < cov.cols(); ++c)
                if (cov(r, c)) covered.emplace_back(r, c);
    }

    GradcheckReport report;
    for (Role role : cfg.roles) {
        GradcheckEntry entry;
        entry.role = role;
        const auto record = [&entry](double ad, double fd) {
            const double abs_err = std::abs(ad - fd);
            entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
            entry.max_rel_err = std::max(entry.max_rel_err, abs_err / (std::abs(fd) + 1e-12));
            ++entry.samples;
        };
        // central difference of the total loss under a scalar mutation
        const auto fd_scalar = [&](Real& slot, double h) {
            const Real keep = slot;
            slot = keep + Real(h);
            const double lp = eval();
            slot = keep - Real(h);
            const double lm = eval();
            slot = keep;
            return (lp - lm) / (2 * h);
        };
        const auto check_complex_array = [&](std::vector<CArr<Real>>& fields,
                                             const std::vector<CArr<Real>>& grads,
                                             bool window_covered_only) {
            for (int s = 0; s < cfg.array_samples; ++s) {
                const std::size_t j = rng() % fields.size();
                CArr<Real>& f = fields[j];
                Eigen::Index r, c;
                if (window_covered_only) {
                    const auto& rc = covered[rng() % covered.size()];
                    r = rc.first;
                    c = rc.second;
                } else {
                    r = Eigen::Index(rng() % std::uint64_t(f.rows()));
                    c = Eigen::Index(rng() % std::uint64_t(f.cols()));
                }
                const double h = cfg.step_field * (detail::rms_magnitude(f) + 1e-6);
                const Cpx<Real> keep = f(r, c);
                f(r, c) = keep + Cpx<Real>(Real(h), 0);
                const double lpr = eval();
                f(r, c) = keep - Cpx<Real>(Real(h), 0);
                const double lmr = eval();
                f(r, c) = keep + Cpx<Real>(0, Real(h));
                const double lpi = eval();
                f(r, c) = keep - Cpx<Real>(0, Real(h));
                const double lmi = eval();
                f(r, c) = keep;
                const std::complex<double> fd((lpr - lmr) / (2 * h), (lpi - lmi) / (2 * h));
                const std::complex<double> ad(grads[j](r, c));
                const double abs_err = std::abs(ad - fd * 0.5);
                entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
                entry.max_rel_err =
                    std::max(entry.max_rel_err, abs_err / (std::abs(fd * 0.5) + 1e-12));
                ++entry.samples;
            }
        };
        switch (role) {
        case Role::Probe: check_complex_array(st.probe.fields, G.probe, false); break;
        case Role::Object: check_complex_array(st.object.fields, G.object, true); break;
        case Role::Position: {
            const int kk = std::min(st.shots(), cfg.max_scalar_shots);
            for (int k = 0; k < kk; ++k)
                for (int axis = 0; axis < 2; ++axis) {
                    const double pitch = axis == 0 ? st.probe.grid.px : st.probe.grid.py;
                    const double h = cfg.step_position * pitch;
                    record(double(G.positions[std::size_t(k)][axis]),
                           fd_scalar(st.positions[std::size_t(k)][axis], h));
                }
            break;
        }
        case Role::Power: {
            const int kk = std::min(st.shots(), cfg.max_scalar_shots);
            for (int k = 0; k < kk; ++k)
                record(double(G.powers[std::size_t(k)]),
                       fd_scalar(st.powers[std::size_t(k)],
                                 cfg.step_power * std::abs(double(st.powers[std::size_t(k)])) +
                                     1e-12));
            break;
        }
        case Role::Wavelength:
            for (int l = 0; l < st.L(); ++l)
                record(double(G.wavelengths[std::size_t(l)]),
                       fd_scalar(st.wavelengths[std::size_t(l)],
                                 cfg.step_wavelength * double(st.wavelengths[std::size_t(l)])));
            break;
        case Role::Distance:
            record(double(G.distance), fd_scalar(st.distance, cfg.step_distance * double(st.distance)));
            break;
        case Role::Background: {
            RArr<Real>& b = st.background_root;
            const double h =
                cfg.step_background * (std::sqrt(double(b.square().sum()) / b.size()) + 1.0);
            for (int s = 0; s < cfg.array_samples; ++s) {
                const Eigen::Index r = Eigen::Index(rng() % std::uint64_t(b.rows()));
                const Eigen::Index c = Eigen::Index(rng() % std::uint64_t(b.cols()));
                record(double(G.background(r, c)), fd_scalar(b(r, c), h));
            }
            break;
        }
        }
        report.worst = std::max(report.worst, entry.max_rel_err);
        report.entries.push_back(entry);
    }
    report.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

} // namespace ptycho
