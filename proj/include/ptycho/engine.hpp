#pragma once

// Joint optimization driver: Adam over the forward model's seven variable
// roles with per-role staging, shuffled mini-batches, divergence watchdog,
// and per-iteration instrumentation (loss, wall time, tracked tape bytes,
// propagation count). Also hosts the default initialization policy and a
// small benchmark harness used to verify the cost model.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ptycho/meter.hpp"
#include "ptycho/model.hpp"
#include "ptycho/objectives.hpp"
#include "ptycho/parallel.hpp"

namespace ptycho {

// ---------------------------------------------------------------------------
// schedule

struct RoleSchedule {
    bool enabled = true;
    int from_epoch = 1; // first epoch (1-based) at which this role updates
    double lr = 0;      // absolute step size; 0 = derive from the state scale
    double decay = 0;   // per-epoch multiplicative decay; 0 = constant
};

// Default staging: fields first, then per-shot power and detector background,
// then scan positions, and finally the global geometry (distance and
// wavelengths) once the field estimates can support them.
struct Schedule {
    int epochs = 40;
    int batch_size = 0; // shots per mini-batch; 0 = full batch
    std::uint64_t seed = 1;
    int threads = 1; // 0 = hardware default; reductions are order-fixed either way
    double divergence_factor = 1e3;
    int divergence_patience = 100;

    RoleSchedule probe{};
    RoleSchedule object{};
    RoleSchedule position{true, 21};
    RoleSchedule power{true, 11};
    RoleSchedule wavelength{true, 31};
    RoleSchedule distance{true, 31};
    RoleSchedule background{true, 11};

    RoleSchedule& for_role(Role r) {
        switch (r) {
        case Role::Probe: return probe;
        case Role::Object: return object;
        case Role::Position: return position;
        case Role::Power: return power;
        case Role::Wavelength: return wavelength;
        case Role::Distance: return distance;
        case Role::Background: return background;
        }
        return probe; // unreachable
    }
    const RoleSchedule& for_role(Role r) const {
        return const_cast<Schedule*>(this)->for_role(r);
    }
};

// ---------------------------------------------------------------------------
// Adam

// First/second moment buffers per role, flat over that role's real degrees of
// freedom (complex entries count as two). Each role keeps its own step
// counter so bias correction restarts from the epoch the role is enabled.
template <class Real>
struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    struct Slot {
        std::vector<Real> m, v;
        long t = 0;
    };
    std::array<Slot, 7> slots;

    Slot& slot(Role r) { return slots[std::size_t(r)]; }
    const Slot& slot(Role r) const { return slots[std::size_t(r)]; }
};

namespace detail {

template <class T>
struct Span {
    T* p = nullptr;
    std::size_t n = 0;
};

// Flat views over one role's storage. Complex arrays are reinterpreted as
// interleaved (re, im) pairs, which matches the Wirtinger convention used by
// the tape: stepping the pair against (dL/d re, dL/d im) = 2 * dL/dconj is the
// same direction Adam normalizes away.
template <class Real>
std::vector<Span<Real>> variable_spans(ModelState<Real>& st, Role r) {
    std::vector<Span<Real>> s;
    switch (r) {
    case Role::Probe:
        for (auto& f : st.probe.fields)
            s.push_back({reinterpret_cast<Real*>(f.data()), 2 * std::size_t(f.size())});
        break;
    case Role::Object:
        for (auto& f : st.object.fields)
            s.push_back({reinterpret_cast<Real*>(f.data()), 2 * std::size_t(f.size())});
        break;
    case Role::Position:
        for (auto& p : st.positions) s.push_back({p.data(), 2});
        break;
    case Role::Power: s.push_back({st.powers.data(), st.powers.size()}); break;
    case Role::Wavelength: s.push_back({st.wavelengths.data(), st.wavelengths.size()}); break;
    case Role::Distance: s.push_back({&st.distance, 1}); break;
    case Role::Background:
        s.push_back({st.background_root.data(), std::size_t(st.background_root.size())});
        break;
    }
    return s;
}

template <class Real>
std::vector<Span<const Real>> gradient_spans(const GradientSet<Real>& g, Role r) {
    std::vector<Span<const Real>> s;
    switch (r) {
    case Role::Probe:
        for (const auto& f : g.probe)
            s.push_back({reinterpret_cast<const Real*>(f.data()), 2 * std::size_t(f.size())});
        break;
    case Role::Object:
        for (const auto& f : g.object)
            s.push_back({reinterpret_cast<const Real*>(f.data()), 2 * std::size_t(f.size())});
        break;
    case Role::Position:
        for (const auto& p : g.positions) s.push_back({p.data(), 2});
        break;
    case Role::Power: s.push_back({g.powers.data(), g.powers.size()}); break;
    case Role::Wavelength: s.push_back({g.wavelengths.data(), g.wavelengths.size()}); break;
    case Role::Distance: s.push_back({&g.distance, 1}); break;
    case Role::Background:
        s.push_back({g.background.data(), std::size_t(g.background.size())});
        break;
    }
    return s;
}

template <class Real>
void zero_gradients(GradientSet<Real>& g) {
    for (auto& f : g.probe) f.setZero();
    for (auto& f : g.object) f.setZero();
    for (auto& p : g.positions) p.setZero();
    std::fill(g.powers.begin(), g.powers.end(), Real(0));
    std::fill(g.wavelengths.begin(), g.wavelengths.end(), Real(0));
    g.distance = 0;
    g.background.setZero();
}

} // namespace detail

// One Adam update of `role` in place. A zero gradient leaves the variables
// bit-identical (fresh moments stay zero) but still advances the step
// counter. Non-finite gradients abort naming the role and iteration.
template <class Real>
void adam_step(AdamState<Real>& adam, ModelState<Real>& st, const GradientSet<Real>& grads,
               Role role, double lr, long iteration = -1) {
    auto vars = detail::variable_spans(st, role);
    auto gs = detail::gradient_spans(grads, role);
    std::size_t total = 0, gtotal = 0;
    for (const auto& s : vars) total += s.n;
    for (const auto& s : gs) gtotal += s.n;
    if (vars.size() != gs.size() || total != gtotal)
        throw InternalConsistencyError("gradient layout does not match the model state");

    auto& slot = adam.slot(role);
    if (slot.m.empty()) {
        slot.m.assign(total, Real(0));
        slot.v.assign(total, Real(0));
    } else if (slot.m.size() != total) {
        throw InternalConsistencyError("optimizer state size changed mid-run");
    }
    slot.t += 1;
    const double bc1 = 1.0 - std::pow(adam.beta1, double(slot.t));
    const double bc2 = 1.0 - std::pow(adam.beta2, double(slot.t));

    std::size_t off = 0;
    for (std::size_t i = 0; i < vars.size(); ++i) {
        Real* x = vars[i].p;
        const Real* g = gs[i].p;
        for (std::size_t j = 0; j < vars[i].n; ++j, ++off) {
            const double gj = double(g[j]);
            if (!std::isfinite(gj))
                throw NumericalFailureError(
                    "non-finite gradient for role " + std::string(role_name(role)) +
                    (iteration >= 0 ? " at iteration " + std::to_string(iteration) : ""));
            const double m = adam.beta1 * double(slot.m[off]) + (1.0 - adam.beta1) * gj;
            const double v = adam.beta2 * double(slot.v[off]) + (1.0 - adam.beta2) * gj * gj;
            slot.m[off] = Real(m);
            slot.v[off] = Real(v);
            x[j] = Real(double(x[j]) - lr * (m / bc1) / (std::sqrt(v / bc2) + adam.epsilon));
        }
    }
}

// ---------------------------------------------------------------------------
// batch gradient accumulation

// Sum of per-shot losses over `shots` plus the object regularizers, with the
// matching gradient written into `G` (zeroed here). Each shot records and
// consumes exactly one tape; with multiple threads every shot writes a
// private slot and the reduction runs on the caller thread in shot-index
// order, so the result is bit-identical to a single-threaded run.
template <class Real>
double accumulate_batch(const ModelState<Real>& st, const Dataset<Real>& data,
                        const LossConfig& loss, const std::vector<int>& shots, int threads,
                        GradientSet<Real>& G, long* gradient_passes = nullptr) {
    detail::zero_gradients(G);
    const int B = int(shots.size());
    const auto run_shot = [&](int k, GradientSet<Real>& into) {
        Tape<Real> tape;
        ShotGraph<Real> g = predict_pattern(st, k, &tape);
        RArr<Real> dI;
        const MaskArr* mask = data.masks.empty() ? nullptr : &data.masks[std::size_t(k)];
        const double l =
            double(loss_and_gradient(g.intensity, data.patterns[std::size_t(k)], mask, loss, dI));
        tape.radj(g.id_intensity, dI.rows(), dI.cols()) = dI;
        tape.backward();
        harvest_gradients(tape, g, k, st, into);
        return l;
    };

    long passes = 0;
    double total = 0;
    if (threads <= 1 || B == 1) {
        for (int i = 0; i < B; ++i) {
            total += run_shot(shots[std::size_t(i)], G);
            ++passes;
        }
    } else {
        std::vector<GradientSet<Real>> slots(static_cast<std::size_t>(B));
        for (auto& s : slots) s = GradientSet<Real>::zeros_like(st);
        std::vector<double> losses(std::size_t(B), 0.0);
        std::atomic<long> counted{0};
        parallel_for(B, threads, [&](int i) {
            losses[std::size_t(i)] = run_shot(shots[std::size_t(i)], slots[std::size_t(i)]);
            counted.fetch_add(1, std::memory_order_relaxed);
        });
        for (int i = 0; i < B; ++i) {
            G += slots[std::size_t(i)];
            total += losses[std::size_t(i)];
        }
        passes = counted.load();
    }
    if (passes != long(B))
        throw InternalConsistencyError("expected exactly one gradient pass per shot per batch");
    if (loss.l1_amplitude > 0 || loss.tv_amplitude > 0)
        total += double(tv_l1_regularize<Real>(st.object, loss.l1_amplitude, loss.tv_amplitude,
                                               loss.epsilon, &G.object));
    if (gradient_passes) *gradient_passes = passes;
    return total;
}

// ---------------------------------------------------------------------------
// learning-rate defaults

// Absolute default step sizes derived from the state scale: 1e-2 of the RMS
// magnitude for field roles, 5% of a pixel for positions, and 1e-4 relative
// for the global geometry scalars.
template <class Real>
std::array<double, 7> default_learning_rates(const ModelState<Real>& st) {
    const auto stack_rms = [](const ModalStack<Real>& s) {
        double acc = 0;
        std::size_t n = 0;
        for (const auto& f : s.fields) {
            acc += double(f.abs2().sum());
            n += std::size_t(f.size());
        }
        return n ? std::sqrt(acc / double(n)) : 0.0;
    };
    double sigma = 0;
    for (Real p : st.powers) sigma += std::abs(double(p));
    sigma /= double(std::max<std::size_t>(1, st.powers.size()));
    double lambda = 0;
    for (Real l : st.wavelengths) lambda += double(l);
    lambda /= double(std::max<std::size_t>(1, st.wavelengths.size()));
    const double b_rms = std::sqrt(double((st.background_root * st.background_root).sum()) /
                                   double(std::max<Eigen::Index>(1, st.background_root.size())));

    std::array<double, 7> lr{};
    lr[std::size_t(Role::Probe)] = 1e-2 * std::max(stack_rms(st.probe), 1e-12);
    lr[std::size_t(Role::Object)] = 1e-2 * std::max(stack_rms(st.object), 1e-12);
    lr[std::size_t(Role::Position)] = 0.05 * std::min(st.probe.grid.px, st.probe.grid.py);
    lr[std::size_t(Role::Power)] = 1e-2 * std::max(sigma, 1e-3);
    lr[std::size_t(Role::Wavelength)] = 1e-4 * lambda;
    lr[std::size_t(Role::Distance)] = 1e-4 * std::abs(double(st.distance));
    lr[std::size_t(Role::Background)] = 1e-2 * std::max(b_rms, 1e-3);
    return lr;
}

// ---------------------------------------------------------------------------
// reconstruction loop

struct IterationLog {
    long iteration = 0; // 1-based
    int epoch = 0;
    double loss = 0;    // batch loss: data terms plus regularizers
    double time_ms = 0;
    std::int64_t live_bytes = 0;   // tracked tape bytes at log time
    std::int64_t propagations = 0; // cumulative forward propagations this run
};

template <class Real>
struct ReconResult {
    ModelState<Real> state;
    std::vector<double> loss_history; // one entry per iteration (batch loss)
    std::vector<IterationLog> log;
    long gradient_passes = 0; // backward passes consumed == shots processed
    int iterations = 0;
    bool loss_trend_ok = true; // soft moving-average check; logged, never asserted
};

template <class Real>
ScanTable corrected_scan(const ModelState<Real>& st) {
    ScanTable t;
    t.positions.reserve(st.positions.size());
    for (const auto& p : st.positions)
        t.positions.emplace_back(double(p[0]), double(p[1]));
    t.powers.assign(st.powers.begin(), st.powers.end());
    return t;
}

// Runs the staged Adam loop from an explicit starting state. Epochs iterate
// over shuffled mini-batches; each batch does exactly one gradient pass per
// shot, reduces in fixed order, applies the regularizers once, and steps
// every role whose stage has opened. Modes are never re-orthogonalized here;
// that is a post-processing choice.
template <class Real>
ReconResult<Real> reconstruct(const Dataset<Real>& data, ModelState<Real> st,
                              const Schedule& sched, const LossConfig& loss) {
    data.validate();
    st.validate();
    if (st.shots() != data.shots())
        throw GraphConstructionError("state and dataset disagree on the shot count");
    if (st.det_grid != data.det_grid)
        throw GraphConstructionError("state and dataset disagree on the detector grid");
    if (st.L() != int(data.wavelengths.size()))
        throw GraphConstructionError("state and dataset disagree on the wavelength count");
    if (sched.epochs < 1) throw InvalidArgumentError("schedule needs at least one epoch");

    const int K = st.shots();
    const int B = sched.batch_size <= 0 ? K : std::min(sched.batch_size, K);
    const int threads = sched.threads <= 0 ? default_threads() : sched.threads;
    const std::array<double, 7> lr0 = default_learning_rates(st);

    ReconResult<Real> out;
    AdamState<Real> adam;
    GradientSet<Real> G = GradientSet<Real>::zeros_like(st);
    std::mt19937_64 rng(sched.seed);
    std::vector<int> order(static_cast<std::size_t>(K));
    for (int i = 0; i < K; ++i) order[std::size_t(i)] = i;
    std::vector<int> batch;

    const std::int64_t prop0 = propagation_counter().load();
    double initial_per_shot = std::numeric_limits<double>::quiet_NaN();
    int diverged_streak = 0;
    long iteration = 0;

    for (int epoch = 1; epoch <= sched.epochs; ++epoch) {
        // Explicit Fisher-Yates so the visit order depends only on the seed,
        // not on a standard library's shuffle implementation.
        for (int i = K - 1; i > 0; --i) {
            const int j = int(rng() % std::uint64_t(i + 1));
            std::swap(order[std::size_t(i)], order[std::size_t(j)]);
        }
        for (int start = 0; start < K; start += B) {
            const auto t0 = std::chrono::steady_clock::now();
            batch.assign(order.begin() + start, order.begin() + std::min(K, start + B));
            long passes = 0;
            const double batch_loss = accumulate_batch(st, data, loss, batch, threads, G, &passes);
            out.gradient_passes += passes;
            ++iteration;

            for (Role role : kAllRoles) {
                const RoleSchedule& rs = sched.for_role(role);
                if (!rs.enabled || epoch < rs.from_epoch) continue;
                double lr = rs.lr > 0 ? rs.lr : lr0[std::size_t(role)];
                if (rs.decay > 0) lr *= std::pow(rs.decay, double(epoch - rs.from_epoch));
                adam_step(adam, st, G, role, lr, iteration);
            }

            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            out.loss_history.push_back(batch_loss);
            out.log.push_back({iteration, epoch, batch_loss, ms, MemoryMeter::live(),
                               propagation_counter().load() - prop0});

            // Watchdog on the per-shot loss so uneven trailing batches
            // compare on the same scale as full ones.
            const double per_shot = batch_loss / double(batch.size());
            if (std::isnan(initial_per_shot)) initial_per_shot = per_shot;
            if (initial_per_shot > 0 && per_shot > sched.divergence_factor * initial_per_shot) {
                if (++diverged_streak >= sched.divergence_patience)
                    throw DivergenceError("optimization diverged: iteration " +
                                          std::to_string(iteration) + " per-shot loss " +
                                          std::to_string(per_shot) + " vs initial " +
                                          std::to_string(initial_per_shot));
            } else {
                diverged_streak = 0;
            }
        }
    }

    out.iterations = int(iteration);
    out.state = std::move(st);
    if (out.loss_history.size() >= 8) {
        const std::size_t w = out.loss_history.size() / 4;
        double head = 0, tail = 0;
        for (std::size_t i = 0; i < w; ++i) head += out.loss_history[i];
        for (std::size_t i = out.loss_history.size() - w; i < out.loss_history.size(); ++i)
            tail += out.loss_history[i];
        out.loss_trend_ok = tail <= head * 1.05;
    }
    return out;
}

// ---------------------------------------------------------------------------
// initialization policy

struct EllipseSpec {
    double cx = 0, cy = 0; // center offset from the grid center [m]
    double ax = 0, ay = 0; // semi-axes [m]; 0 = quarter of the grid extent
    double rot = 0;        // rotation [rad]
};

struct InitConfig {
    Grid probe_grid;                   // nx == 0: conjugate grid at the shortest wavelength
    std::vector<EllipseSpec> ellipses; // one shared, or one per wavelength
    int probe_modes = 1;
    int object_modes = 1;
    double edge_softness = 0.15;      // taper width as a fraction of the ellipse radius
    double main_mode_fraction = 0.75; // power share of the first probe mode
    double object_value = 1.0;        // uniform object init
    double object_phase_noise = 0.0;  // [rad]; > 0 adds seeded uniform random phase
    double power0 = 1.0;              // per-shot power coefficient init
    double background0 = 1.0;         // background root b init (N = b^2)
    bool match_power = true;          // scale the probe to the brightest frame
    std::uint64_t seed = 0;
    int object_margin = 2;
};

// Sample-plane grid conjugate to the detector at the shortest wavelength:
// pitch = lambda_min * z / (n * detector_pitch). Longer wavelengths then fall
// inside the chirp-transform band limit automatically.
inline Grid default_probe_grid(const Grid& det_grid, const std::vector<double>& wavelengths,
                               double distance) {
    if (wavelengths.empty()) throw InvalidArgumentError("need at least one wavelength");
    if (!(distance > 0)) throw InvalidArgumentError("distance must be positive");
    const double lmin = *std::min_element(wavelengths.begin(), wavelengths.end());
    if (!(lmin > 0)) throw InvalidArgumentError("wavelengths must be positive");
    return make_grid(det_grid.nx, det_grid.ny, lmin * distance / (det_grid.nx * det_grid.px),
                     lmin * distance / (det_grid.ny * det_grid.py));
}

// Smooth elliptical aperture: 1 inside, raised-cosine taper across the last
// `softness` fraction of the elliptical radius, 0 outside.
template <class Real>
CArr<Real> elliptical_aperture(const Grid& g, const EllipseSpec& e, double softness) {
    const double ax = e.ax > 0 ? e.ax : 0.25 * g.extent_x();
    const double ay = e.ay > 0 ? e.ay : 0.25 * g.extent_y();
    if (!(ax > 0) || !(ay > 0)) throw InvalidArgumentError("aperture semi-axes must be positive");
    const double w = std::clamp(softness, 1e-6, 1.0);
    const double cr = std::cos(e.rot), sr = std::sin(e.rot);
    CArr<Real> f(g.ny, g.nx);
    for (int r = 0; r < g.ny; ++r) {
        const double dy = (r - g.cy()) * g.py - e.cy;
        for (int c = 0; c < g.nx; ++c) {
            const double dx = (c - g.cx()) * g.px - e.cx;
            const double u = (cr * dx + sr * dy) / ax;
            const double v = (-sr * dx + cr * dy) / ay;
            const double rho = std::sqrt(u * u + v * v);
            double amp = 0;
            if (rho <= 1.0 - w)
                amp = 1.0;
            else if (rho < 1.0)
                amp = 0.5 * (1.0 + std::cos(M_PI * (rho - (1.0 - w)) / w));
            f(r, c) = Cpx<Real>(Real(amp), 0);
        }
    }
    return f;
}

namespace detail {

// Low-order monomial in the ellipse-normalized rotated frame; index m >= 1
// walks (1,0), (0,1), (1,1), (2,0), (0,2), (2,1), ... These are near-
// orthogonal under the aperture weight, which is all the symmetry breaking
// the higher probe modes need at init.
template <class Real>
CArr<Real> mode_polynomial(const Grid& g, const EllipseSpec& e, int m) {
    static constexpr int kPow[][2] = {{0, 0}, {1, 0}, {0, 1}, {1, 1}, {2, 0},
                                      {0, 2}, {2, 1}, {1, 2}, {3, 0}, {0, 3}};
    const int idx = std::min(m, int(sizeof(kPow) / sizeof(kPow[0])) - 1);
    const int pi = kPow[idx][0], pj = kPow[idx][1];
    const double ax = e.ax > 0 ? e.ax : 0.25 * g.extent_x();
    const double ay = e.ay > 0 ? e.ay : 0.25 * g.extent_y();
    const double cr = std::cos(e.rot), sr = std::sin(e.rot);
    CArr<Real> f(g.ny, g.nx);
    for (int r = 0; r < g.ny; ++r) {
        const double dy = (r - g.cy()) * g.py - e.cy;
        for (int c = 0; c < g.nx; ++c) {
            const double dx = (c - g.cx()) * g.px - e.cx;
            const double u = (cr * dx + sr * dy) / ax;
            const double v = (-sr * dx + cr * dy) / ay;
            f(r, c) = Cpx<Real>(Real(std::pow(u, pi) * std::pow(v, pj)), 0);
        }
    }
    return f;
}

} // namespace detail

// Builds the starting state from the dataset geometry: smooth elliptical
// apertures as probe modes (higher modes modulated by low-order polynomials
// plus a pinch of seeded noise), a uniform object of `object_value`, unit
// power coefficients, and a uniform background root.
template <class Real>
ModelState<Real> initialize_state(const Dataset<Real>& data, const InitConfig& cfg) {
    data.validate();
    if (cfg.probe_modes < 1 || cfg.object_modes < 1)
        throw InvalidArgumentError("initial state needs at least one probe and one object mode");
    const int L = int(data.wavelengths.size());
    if (!cfg.ellipses.empty() && int(cfg.ellipses.size()) != 1 && int(cfg.ellipses.size()) != L)
        throw InvalidArgumentError("aperture list must be shared or one per wavelength");

    ModelState<Real> st;
    st.det_grid = data.det_grid;
    st.distance = Real(data.distance);
    st.wavelengths.assign(data.wavelengths.begin(), data.wavelengths.end());
    const Grid pg = cfg.probe_grid.nx > 0
                        ? cfg.probe_grid
                        : default_probe_grid(data.det_grid, data.wavelengths, data.distance);
    st.probe = make_modal_stack<Real>(pg, data.wavelengths, cfg.probe_modes);
    st.object = make_modal_stack<Real>(object_grid_for(data.scan, pg, cfg.object_margin),
                                       data.wavelengths, cfg.object_modes);
    st.positions.reserve(data.scan.positions.size());
    for (const auto& p : data.scan.positions)
        st.positions.push_back(Vec2<Real>(Real(p[0]), Real(p[1])));
    st.powers.assign(std::size_t(data.shots()), Real(cfg.power0));
    st.background_root =
        RArr<Real>::Constant(data.det_grid.ny, data.det_grid.nx, Real(cfg.background0));

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(-1.0, 1.0);

    const int M = cfg.probe_modes;
    const double frac_rest = M > 1 ? (1.0 - cfg.main_mode_fraction) / double(M - 1) : 0.0;
    for (int l = 0; l < L; ++l) {
        const EllipseSpec e = cfg.ellipses.empty()
                                  ? EllipseSpec{}
                                  : cfg.ellipses[cfg.ellipses.size() == 1 ? 0 : std::size_t(l)];
        const CArr<Real> ap = elliptical_aperture<Real>(pg, e, cfg.edge_softness);
        for (int m = 0; m < M; ++m) {
            CArr<Real> f = ap;
            if (m > 0) {
                f *= detail::mode_polynomial<Real>(pg, e, m);
                for (int r = 0; r < pg.ny; ++r)
                    for (int c = 0; c < pg.nx; ++c)
                        f(r, c) += Real(0.02) * ap(r, c) *
                                   Cpx<Real>(Real(nd(rng)), Real(nd(rng)));
            }
            const double target = M == 1 ? 1.0 : (m == 0 ? cfg.main_mode_fraction : frac_rest);
            const double pwr = double(f.abs2().sum());
            if (pwr > 0) f *= Real(std::sqrt(target / pwr));
            st.probe.at(l, m) = f;
        }
    }

    for (int l = 0; l < L; ++l)
        for (int n = 0; n < cfg.object_modes; ++n) {
            CArr<Real>& f = st.object.at(l, n);
            if (n == 0) {
                if (cfg.object_phase_noise > 0) {
                    for (int r = 0; r < int(f.rows()); ++r)
                        for (int c = 0; c < int(f.cols()); ++c) {
                            const double phi = cfg.object_phase_noise * ud(rng);
                            f(r, c) = Real(cfg.object_value) *
                                      Cpx<Real>(Real(std::cos(phi)), Real(std::sin(phi)));
                        }
                } else {
                    f.setConstant(Cpx<Real>(Real(cfg.object_value), 0));
                }
            } else {
                // Higher object modes start as faint seeded noise; identical
                // modes would receive identical gradients and never separate.
                for (int r = 0; r < int(f.rows()); ++r)
                    for (int c = 0; c < int(f.cols()); ++c)
                        f(r, c) = Real(0.05 * cfg.object_value) *
                                  Cpx<Real>(Real(nd(rng)), Real(nd(rng)));
            }
        }

    if (cfg.match_power && data.shots() > 0) {
        int kstar = 0;
        double best = -1;
        for (int k = 0; k < data.shots(); ++k) {
            const double s = double(data.patterns[std::size_t(k)].sum());
            if (s > best) {
                best = s;
                kstar = k;
            }
        }
        const RArr<Real> I = predict_pattern(st, kstar);
        const double bg = double((st.background_root * st.background_root).sum());
        const double have = double(I.sum()) - bg;
        const double want = best - bg;
        if (have > 0 && want > 0) {
            const Real s = Real(std::sqrt(want / have));
            for (auto& f : st.probe.fields) f *= s;
        }
    }

    st.validate();
    return st;
}

template <class Real>
ReconResult<Real> reconstruct(const Dataset<Real>& data, const InitConfig& init,
                              const Schedule& sched, const LossConfig& loss) {
    return reconstruct(data, initialize_state<Real>(data, init), sched, loss);
}

// ---------------------------------------------------------------------------
// benchmark harness

struct BenchSize {
    int L = 1, M = 1, N = 1;
};

struct BenchRow {
    int L = 0, M = 0, N = 0;
    int iterations = 0;
    double ms_per_iteration = 0;      // median full iteration (forward+backward+update)
    double forward_ms = 0;            // forward-only evaluation of the same batch
    double backward_over_forward = 0; // (full - forward) / forward
    std::int64_t propagations_per_iteration = 0;
    std::int64_t peak_live_bytes = 0; // peak tracked tape bytes during the run
};

// Self-consistent synthetic problem for timing: random fields, fractional
// scan positions, dataset = the model's own noiseless predictions. Starting
// at the optimum keeps the watchdog quiet while every code path still runs.
template <class Real>
std::pair<ModelState<Real>, Dataset<Real>> make_bench_instance(int n, int L, int M, int N,
                                                               int shots, std::uint64_t seed) {
    if (n < 4 || L < 1 || M < 1 || N < 1 || shots < 1)
        throw InvalidArgumentError("benchmark instance needs n >= 4 and positive sizes");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(-2.0, 2.0);

    const double pitch = 5e-6, z = 88e-3;
    std::vector<double> wl(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) wl[std::size_t(l)] = 17.30e-9 * (1.0 + 0.036 * l);
    const double det_pitch = 0.9 * wl[0] * z / (n * pitch);
    const Grid pg = make_grid(n, n, pitch, pitch);
    const Grid dg = make_grid(n, n, det_pitch, det_pitch);

    std::vector<Eigen::Vector2d> pos(static_cast<std::size_t>(shots));
    for (auto& p : pos) p = Eigen::Vector2d(ud(rng) * pitch, ud(rng) * pitch);
    std::vector<double> pw(static_cast<std::size_t>(shots));
    for (auto& s : pw) s = 1.0 + 0.1 * nd(rng);

    ModelState<Real> st;
    st.det_grid = dg;
    st.distance = Real(z);
    st.wavelengths.assign(wl.begin(), wl.end());
    ScanTable scan = make_scan_table(pos, pw);
    st.probe = make_modal_stack<Real>(pg, wl, M);
    st.object = make_modal_stack<Real>(object_grid_for(scan, pg), wl, N);
    for (auto& f : st.probe.fields)
        for (int r = 0; r < pg.ny; ++r)
            for (int c = 0; c < pg.nx; ++c) f(r, c) = Cpx<Real>(Real(nd(rng)), Real(nd(rng)));
    for (auto& f : st.object.fields)
        for (int r = 0; r < int(f.rows()); ++r)
            for (int c = 0; c < int(f.cols()); ++c)
                f(r, c) = Cpx<Real>(Real(1 + 0.3 * nd(rng)), Real(0.3 * nd(rng)));
    st.positions.reserve(pos.size());
    for (const auto& p : pos) st.positions.push_back(Vec2<Real>(Real(p[0]), Real(p[1])));
    st.powers.assign(pw.begin(), pw.end());
    st.background_root = RArr<Real>::Constant(n, n, Real(0.1));

    Dataset<Real> data;
    data.det_grid = dg;
    data.distance = z;
    data.wavelengths = wl;
    data.scan = std::move(scan);
    data.patterns.reserve(std::size_t(shots));
    for (int k = 0; k < shots; ++k) data.patterns.push_back(predict_pattern(st, k));
    return {std::move(st), std::move(data)};
}

// Times full optimization iterations across problem sizes. `corrections`
// toggles the position/power/wavelength/distance/background roles so the
// caller can compare peak memory with and without them.
template <class Real>
std::vector<BenchRow> benchmark_run(int n, int shots, const std::vector<BenchSize>& sizes,
                                    int iterations, bool corrections, std::uint64_t seed = 17) {
    if (iterations < 1) throw InvalidArgumentError("benchmark needs at least one iteration");
    std::vector<BenchRow> rows;
    rows.reserve(sizes.size());
    for (const auto& sz : sizes) {
        auto [st, data] = make_bench_instance<Real>(n, sz.L, sz.M, sz.N, shots, seed);

        Schedule sched;
        sched.epochs = iterations;
        sched.batch_size = 0;
        sched.seed = seed;
        sched.threads = 1;
        for (Role r : {Role::Position, Role::Power, Role::Wavelength, Role::Distance,
                       Role::Background}) {
            sched.for_role(r).enabled = corrections;
            sched.for_role(r).from_epoch = 1;
        }
        LossConfig loss;
        loss.kind = LossKind::AmplitudeMse;

        MemoryMeter::reset_peak();
        const ModelState<Real> st0 = st;
        const ReconResult<Real> res = reconstruct(data, std::move(st), sched, loss);

        BenchRow row;
        row.L = sz.L;
        row.M = sz.M;
        row.N = sz.N;
        row.iterations = res.iterations;
        std::vector<double> times;
        times.reserve(res.log.size());
        for (const auto& e : res.log) times.push_back(e.time_ms);
        std::nth_element(times.begin(), times.begin() + long(times.size() / 2), times.end());
        row.ms_per_iteration = times[times.size() / 2];
        row.propagations_per_iteration =
            res.iterations > 0 ? res.log.back().propagations / res.iterations : 0;
        row.peak_live_bytes = MemoryMeter::peak();

        const auto t0 = std::chrono::steady_clock::now();
        for (int k = 0; k < st0.shots(); ++k) (void)predict_pattern(st0, k);
        row.forward_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        row.backward_over_forward =
            row.forward_ms > 0
                ? std::max(0.0, (row.ms_per_iteration - row.forward_ms) / row.forward_ms)
                : 0.0;
        rows.push_back(row);
    }
    return rows;
}

} // namespace ptycho
