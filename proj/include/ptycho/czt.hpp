#pragma once

// Chirp-z "zoom" DFT between centered grids:
//
//   G[j] = sum_i x[i] * exp(-2*pi*1i * alpha * (i - ci) * (j - cj))
//
// with one real pitch product alpha per axis. Evaluated by Bluestein's
// identity  pq = (p^2 + q^2 - (p - q)^2) / 2,  p = i - ci, q = j - cj,
// which turns the sum into a linear convolution of the chirped input with a
// fixed chirp kernel; the convolution runs in a power-of-two FFT. The
// conjugate-transpose of the operator is the same transform with -alpha and
// the grid roles swapped, which is what every adjoint in the AD layer uses.
//
// Plans (chirp tables plus kernel spectrum) are cached per
// (alpha, n_in, ci, n_out, cj) behind a mutex.

#include <cstring>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "ptycho/fft.hpp"

namespace ptycho {

namespace detail {

struct CztKey {
    double alpha;
    int n_in, ci, n_out, cj;
    bool operator==(const CztKey& o) const {
        return alpha == o.alpha && n_in == o.n_in && ci == o.ci && n_out == o.n_out && cj == o.cj;
    }
};

struct CztKeyHash {
    std::size_t operator()(const CztKey& k) const {
        std::uint64_t bits;
        std::memcpy(&bits, &k.alpha, sizeof bits);
        std::size_t h = std::hash<std::uint64_t>()(bits);
        const auto mix = [&h](std::size_t v) { h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2); };
        mix(std::size_t(k.n_in));
        mix(std::size_t(k.ci) << 1);
        mix(std::size_t(k.n_out) << 2);
        mix(std::size_t(k.cj) << 3);
        return h;
    }
};

template <class Real>
struct CztPlan {
    int n_in = 0, ci = 0, n_out = 0, cj = 0, L = 0;
    std::vector<Cpx<Real>> in_chirp;   // e^{-i pi alpha p^2}
    std::vector<Cpx<Real>> out_chirp;  // e^{-i pi alpha q^2}
    std::vector<Cpx<Real>> kernel_fft; // FFT of wrapped e^{+i pi alpha t^2}, scaled 1/L
};

template <class Real>
std::shared_ptr<const CztPlan<Real>> czt_plan(double alpha, int n_in, int ci, int n_out, int cj) {
    static std::mutex mu;
    static std::unordered_map<CztKey, std::shared_ptr<const CztPlan<Real>>, CztKeyHash> cache;
    const CztKey key{alpha, n_in, ci, n_out, cj};
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;

    auto plan = std::make_shared<CztPlan<Real>>();
    plan->n_in = n_in;
    plan->ci = ci;
    plan->n_out = n_out;
    plan->cj = cj;
    plan->L = next_pow2(n_in + n_out - 1);

    const auto unit = [](double phase) {
        const std::complex<double> c = std::polar(1.0, phase);
        return Cpx<Real>(Real(c.real()), Real(c.imag()));
    };
    plan->in_chirp.resize(std::size_t(n_in));
    for (int i = 0; i < n_in; ++i) {
        const double p = double(i - ci);
        plan->in_chirp[std::size_t(i)] = unit(-kPi * alpha * p * p);
    }
    plan->out_chirp.resize(std::size_t(n_out));
    for (int j = 0; j < n_out; ++j) {
        const double q = double(j - cj);
        plan->out_chirp[std::size_t(j)] = unit(-kPi * alpha * q * q);
    }
    // Kernel K[r mod L] = h(d - r), h(t) = e^{+i pi alpha t^2}, d = cj - ci,
    // r in [-(n_in - 1), n_out - 1]; elsewhere zero. L >= n_in + n_out - 1
    // keeps the circular convolution equal to the linear one.
    std::vector<Cpx<Real>> ker(std::size_t(plan->L), Cpx<Real>(0, 0));
    const int d = cj - ci;
    for (int r = -(n_in - 1); r <= n_out - 1; ++r) {
        const double t = double(d - r);
        const int slot = r >= 0 ? r : r + plan->L;
        ker[std::size_t(slot)] = unit(kPi * alpha * t * t);
    }
    fft_raw(ker.data(), plan->L, false);
    const Real inv_L = Real(1) / Real(plan->L);
    for (auto& v : ker) v *= inv_L;
    plan->kernel_fft = std::move(ker);

    if (cache.size() >= 256) cache.clear();
    cache.emplace(key, plan);
    return cache.find(key)->second;
}

template <class Real>
void czt1d_apply(const CztPlan<Real>& plan, const Cpx<Real>* x, std::int64_t stride_in,
                 Cpx<Real>* out, std::int64_t stride_out) {
    thread_local std::vector<Cpx<Real>> buf;
    buf.assign(std::size_t(plan.L), Cpx<Real>(0, 0));
    for (int i = 0; i < plan.n_in; ++i)
        buf[std::size_t(i)] = x[stride_in * i] * plan.in_chirp[std::size_t(i)];
    fft_raw(buf.data(), plan.L, false);
    for (int k = 0; k < plan.L; ++k) buf[std::size_t(k)] *= plan.kernel_fft[std::size_t(k)];
    fft_raw(buf.data(), plan.L, true);
    for (int j = 0; j < plan.n_out; ++j)
        out[stride_out * j] = buf[std::size_t(j)] * plan.out_chirp[std::size_t(j)];
}

} // namespace detail

// Separable 2D chirp-z transform between centered arrays; `scale` multiplies
// the result once at the end.
template <class Real>
CArr<Real> czt2d(const CArr<Real>& x, int ny_out, int nx_out, double alpha_y, double alpha_x,
                 Real scale) {
    const int ny_in = int(x.rows());
    const int nx_in = int(x.cols());
    auto plan_x = detail::czt_plan<Real>(alpha_x, nx_in, nx_in / 2, nx_out, nx_out / 2);
    auto plan_y = detail::czt_plan<Real>(alpha_y, ny_in, ny_in / 2, ny_out, ny_out / 2);

    CArr<Real> mid(ny_in, nx_out);
    for (int r = 0; r < ny_in; ++r)
        detail::czt1d_apply(*plan_x, x.data() + std::int64_t(r) * nx_in, 1,
                            mid.data() + std::int64_t(r) * nx_out, 1);
    CArr<Real> out(ny_out, nx_out);
    for (int c = 0; c < nx_out; ++c)
        detail::czt1d_apply(*plan_y, mid.data() + c, nx_out, out.data() + c, nx_out);
    if (scale != Real(1)) out *= scale;
    return out;
}

// Adjoint of czt2d(.., alpha_y, alpha_x, scale) as a linear map: the same
// kernel with negated alphas, swapped shapes and the same scale.
template <class Real>
CArr<Real> czt2d_adjoint(const CArr<Real>& gbar, int ny_in, int nx_in, double alpha_y,
                         double alpha_x, Real scale) {
    return czt2d(gbar, ny_in, nx_in, -alpha_y, -alpha_x, scale);
}

// Scalar chirp sensitivities of L under the conjugate-gradient convention.
// With G = scale * CZT_alpha(x) and gbar[j] = dL/dconj(G[j]):
//   dL/d(alpha_x) = 2 Re sum_i x[i] * (-2 pi 1i) * px_i * conj(B[i]),
// where B is the adjoint transform of gbar pre-weighted by the output
// offset qx_j (and likewise for y). Derivation: differentiate the kernel
// exponent -2 pi 1i alpha px qx and regroup the double sum.
template <class Real>
void czt2d_alpha_gradients(const CArr<Real>& x, const CArr<Real>& gbar, double alpha_y,
                           double alpha_x, Real scale, Real& dL_dalpha_y, Real& dL_dalpha_x) {
    const int ny_in = int(x.rows());
    const int nx_in = int(x.cols());
    const int ny_out = int(gbar.rows());
    const int nx_out = int(gbar.cols());
    const int cx_in = nx_in / 2, cy_in = ny_in / 2;
    const int cx_out = nx_out / 2, cy_out = ny_out / 2;

    CArr<Real> gq(ny_out, nx_out);
    for (int j = 0; j < nx_out; ++j) gq.col(j) = gbar.col(j) * Real(j - cx_out);
    CArr<Real> B = czt2d_adjoint(gq, ny_in, nx_in, alpha_y, alpha_x, scale);
    Real acc = 0;
    for (int r = 0; r < ny_in; ++r)
        for (int c = 0; c < nx_in; ++c) {
            const Cpx<Real> t = x(r, c) * std::conj(B(r, c));
            acc += Real(c - cx_in) * t.imag();
        }
    // Re[x * (-2 pi i) * conj(B)] = 2 pi * Im[x conj(B)] per element, times 2 for
    // the conjugate pair of Wirtinger terms.
    dL_dalpha_x = Real(2) * Real(2) * Real(kPi) * acc;

    for (int i = 0; i < ny_out; ++i) gq.row(i) = gbar.row(i) * Real(i - cy_out);
    B = czt2d_adjoint(gq, ny_in, nx_in, alpha_y, alpha_x, scale);
    acc = 0;
    for (int r = 0; r < ny_in; ++r)
        for (int c = 0; c < nx_in; ++c) {
            const Cpx<Real> t = x(r, c) * std::conj(B(r, c));
            acc += Real(r - cy_in) * t.imag();
        }
    dL_dalpha_y = Real(2) * Real(2) * Real(kPi) * acc;
}

} // namespace ptycho
