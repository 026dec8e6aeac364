#pragma once

// FFT machinery used everywhere else: an iterative radix-2 kernel, a
// Bluestein fallback for arbitrary lengths, and the project-wide centered
// unitary DFT convention
//
//   G[j] = 1/sqrt(n) * sum_i f[i] * exp(-2*pi*1i * (i - c)(j - c) / n),   c = floor(n/2)
//
// realised per axis as  G = roll(rawDFT(roll(f, +c)), -c)  so both domains
// keep the origin at the array center. Twiddle and chirp tables are computed
// in double and cached per length behind a mutex.

#include <cstring>
#include <memory>
#include <mutex>
#include <unordered_map>
#include <vector>

#include "ptycho/grid.hpp"
#include "ptycho/types.hpp"

namespace ptycho {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

inline int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

namespace detail {

// e^{-2 pi i k / n} for k in [0, n/2); n a power of two.
inline const std::vector<std::complex<double>>& twiddle_table(int n) {
    static std::mutex mu;
    static std::unordered_map<int, std::vector<std::complex<double>>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it == cache.end()) {
        std::vector<std::complex<double>> w(std::size_t(n / 2));
        for (int k = 0; k < n / 2; ++k)
            w[std::size_t(k)] = std::polar(1.0, -2.0 * kPi * k / n);
        it = cache.emplace(n, std::move(w)).first;
    }
    return it->second;
}

template <class Real>
void fft_pow2(Cpx<Real>* a, int n, bool inverse) {
    if (n <= 1) return;
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const auto& tw = twiddle_table(n);
    for (int len = 2; len <= n; len <<= 1) {
        const int half = len >> 1;
        const int step = n / len;
        for (int base = 0; base < n; base += len) {
            for (int k = 0; k < half; ++k) {
                const std::complex<double>& wd = tw[std::size_t(k * step)];
                const Cpx<Real> w(Real(wd.real()), Real(inverse ? -wd.imag() : wd.imag()));
                Cpx<Real> u = a[base + k];
                Cpx<Real> v = a[base + k + half] * w;
                a[base + k] = u + v;
                a[base + k + half] = u - v;
            }
        }
    }
}

// Bluestein tables for one odd/composite length; kernel spectrum folds in the
// 1/L of the inverse pass.
template <class Real>
struct BluesteinPlan {
    int n = 0;
    int L = 0;
    std::vector<Cpx<Real>> chirp;      // e^{-i pi k^2 / n}
    std::vector<Cpx<Real>> kernel_fft; // FFT of wrapped e^{+i pi t^2 / n}, scaled by 1/L
};

template <class Real>
std::shared_ptr<const BluesteinPlan<Real>> bluestein_plan(int n) {
    static std::mutex mu;
    static std::unordered_map<int, std::shared_ptr<const BluesteinPlan<Real>>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    auto plan = std::make_shared<BluesteinPlan<Real>>();
    plan->n = n;
    plan->L = next_pow2(2 * n - 1);
    plan->chirp.resize(std::size_t(n));
    for (int k = 0; k < n; ++k) {
        // k^2 mod 2n keeps the sin/cos argument small without changing the value.
        const std::int64_t q = (std::int64_t(k) * k) % (2 * std::int64_t(n));
        const std::complex<double> c = std::polar(1.0, -kPi * double(q) / n);
        plan->chirp[std::size_t(k)] = Cpx<Real>(Real(c.real()), Real(c.imag()));
    }
    std::vector<Cpx<Real>> ker(std::size_t(plan->L), Cpx<Real>(0, 0));
    for (int t = 0; t < n; ++t) {
        const std::int64_t q = (std::int64_t(t) * t) % (2 * std::int64_t(n));
        const std::complex<double> c = std::polar(1.0, kPi * double(q) / n);
        const Cpx<Real> v(Real(c.real()), Real(c.imag()));
        ker[std::size_t(t)] = v;
        if (t > 0) ker[std::size_t(plan->L - t)] = v;
    }
    fft_pow2(ker.data(), plan->L, false);
    const Real inv_L = Real(1) / Real(plan->L);
    for (auto& v : ker) v *= inv_L;
    plan->kernel_fft = std::move(ker);
    cache.emplace(n, plan);
    return plan;
}

template <class Real>
void fft_bluestein(Cpx<Real>* a, int n) {
    auto plan = bluestein_plan<Real>(n);
    thread_local std::vector<Cpx<Real>> buf;
    buf.assign(std::size_t(plan->L), Cpx<Real>(0, 0));
    for (int k = 0; k < n; ++k) buf[std::size_t(k)] = a[k] * plan->chirp[std::size_t(k)];
    fft_pow2(buf.data(), plan->L, false);
    for (int k = 0; k < plan->L; ++k) buf[std::size_t(k)] *= plan->kernel_fft[std::size_t(k)];
    fft_pow2(buf.data(), plan->L, true);
    for (int j = 0; j < n; ++j) a[j] = buf[std::size_t(j)] * plan->chirp[std::size_t(j)];
}

} // namespace detail

// Unnormalized DFT of length n, any n >= 1. inverse=true applies the
// conjugate kernel (still unnormalized).
template <class Real>
void fft_raw(Cpx<Real>* a, int n, bool inverse) {
    if (n <= 1) return;
    if (is_pow2(n)) {
        detail::fft_pow2(a, n, inverse);
        return;
    }
    if (inverse) {
        for (int i = 0; i < n; ++i) a[i] = std::conj(a[i]);
        detail::fft_bluestein(a, n);
        for (int i = 0; i < n; ++i) a[i] = std::conj(a[i]);
    } else {
        detail::fft_bluestein(a, n);
    }
}

// Row/column raw transforms of a row-major 2D array, in place.
template <class Real>
void fft2_raw(CArr<Real>& a, bool inverse) {
    const int ny = int(a.rows());
    const int nx = int(a.cols());
    for (int r = 0; r < ny; ++r) fft_raw(a.data() + std::int64_t(r) * nx, nx, inverse);
    if (ny > 1) {
        thread_local std::vector<Cpx<Real>> col;
        col.resize(std::size_t(ny));
        for (int c = 0; c < nx; ++c) {
            for (int r = 0; r < ny; ++r) col[std::size_t(r)] = a(r, c);
            fft_raw(col.data(), ny, inverse);
            for (int r = 0; r < ny; ++r) a(r, c) = col[std::size_t(r)];
        }
    }
}

// out[y][x] = a[(y + sy) mod ny][(x + sx) mod nx]
template <class T>
Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
roll2(const Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& a, int sy, int sx) {
    const int ny = int(a.rows());
    const int nx = int(a.cols());
    Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(ny, nx);
    const auto wrap = [](int i, int n) {
        int r = i % n;
        return r < 0 ? r + n : r;
    };
    for (int y = 0; y < ny; ++y) {
        const int ys = wrap(y + sy, ny);
        for (int x = 0; x < nx; ++x) out(y, x) = a(ys, wrap(x + sx, nx));
    }
    return out;
}

// Centered unitary 2D DFT (see header comment). Self-inverse pairing with idft2c.
template <class Real>
CArr<Real> dft2c(const CArr<Real>& a) {
    const int ny = int(a.rows());
    const int nx = int(a.cols());
    CArr<Real> w = roll2(a, ny / 2, nx / 2);
    fft2_raw(w, false);
    w = roll2(w, -(ny / 2), -(nx / 2));
    w *= Real(1.0 / std::sqrt(double(nx) * double(ny)));
    return w;
}

template <class Real>
CArr<Real> idft2c(const CArr<Real>& a) {
    const int ny = int(a.rows());
    const int nx = int(a.cols());
    CArr<Real> w = roll2(a, ny / 2, nx / 2);
    fft2_raw(w, true);
    w = roll2(w, -(ny / 2), -(nx / 2));
    w *= Real(1.0 / std::sqrt(double(nx) * double(ny)));
    return w;
}

} // namespace ptycho
