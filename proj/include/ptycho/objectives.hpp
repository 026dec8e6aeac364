#pragma once

// Loss functions on predicted vs measured intensities, all returning the
// scalar value and d(loss)/d(I_pred) for tape seeding. Pixels whose mask
// entry is 0 contribute nothing to either. Epsilon guards sqrt/log/division
// at zero counts.

#include <vector>

#include "ptycho/field.hpp"

namespace ptycho {

enum class LossKind { AmplitudeMse, Gaussian, Poisson, Mixed };

struct LossConfig {
    LossKind kind = LossKind::AmplitudeMse;
    double epsilon = 1e-9;             // count-scale guard
    double read_noise_variance = 1.0;  // gaussian: the variance; mixed: additive read term
    double l1_amplitude = 0.0;         // object amplitude regularizer weights
    double tv_amplitude = 0.0;
};

inline const char* loss_name(LossKind k) {
    switch (k) {
    case LossKind::AmplitudeMse: return "amp_mse";
    case LossKind::Gaussian: return "gaussian";
    case LossKind::Poisson: return "poisson";
    case LossKind::Mixed: return "mixed";
    }
    return "?";
}

// Elementwise masked multiply; self-adjoint as a linear map.
template <class Real>
RArr<Real> mask_apply(const RArr<Real>& x, const MaskArr& m) {
    if (x.rows() != m.rows() || x.cols() != m.cols())
        throw InvalidArgumentError("mask shape mismatch");
    return x * m.cast<Real>();
}

// Incoherent accumulation of per-mode intensity layers; linear, adjoint is
// broadcast of the upstream to every layer.
template <class Real>
RArr<Real> modal_sum(const std::vector<RArr<Real>>& layers) {
    if (layers.empty()) throw InvalidArgumentError("modal_sum needs at least one layer");
    RArr<Real> acc = layers[0];
    for (std::size_t j = 1; j < layers.size(); ++j) acc += layers[j];
    return acc;
}

// Returns the loss over masked-in pixels and fills dI (same shape) with the
// gradient; mask == nullptr means every pixel participates.
template <class Real>
Real loss_and_gradient(const RArr<Real>& I, const RArr<Real>& measured, const MaskArr* mask,
                       const LossConfig& cfg, RArr<Real>& dI) {
    if (I.rows() != measured.rows() || I.cols() != measured.cols())
        throw InvalidArgumentError("loss shape mismatch");
    if (mask && (mask->rows() != I.rows() || mask->cols() != I.cols()))
        throw InvalidArgumentError("loss mask shape mismatch");
    const Real eps = Real(cfg.epsilon);
    const Real rv = Real(cfg.read_noise_variance);
    if (cfg.kind == LossKind::Gaussian && !(cfg.read_noise_variance > 0.0))
        throw InvalidArgumentError("gaussian loss needs variance > 0");

    dI.resize(I.rows(), I.cols());
    Real loss = 0;
    for (Eigen::Index r = 0; r < I.rows(); ++r)
        for (Eigen::Index c = 0; c < I.cols(); ++c) {
            if (mask && (*mask)(r, c) == 0) {
                dI(r, c) = 0;
                continue;
            }
            const Real y = I(r, c);
            const Real t = measured(r, c);
            switch (cfg.kind) {
            case LossKind::AmplitudeMse: {
                const Real sp = std::sqrt(y + eps);
                const Real sm = std::sqrt(t);
                loss += (sp - sm) * (sp - sm);
                dI(r, c) = Real(1) - sm / sp;
                break;
            }
            case LossKind::Poisson: {
                loss += y - t * std::log(y + eps);
                dI(r, c) = Real(1) - t / (y + eps);
                break;
            }
            case LossKind::Gaussian: {
                const Real d = y - t;
                loss += d * d / (Real(2) * rv);
                dI(r, c) = d / rv;
                break;
            }
            case LossKind::Mixed: {
                // Gaussian with signal-dependent variance v = I + read_var + eps
                const Real v = y + rv + eps;
                const Real d = y - t;
                loss += d * d / (Real(2) * v) + Real(0.5) * std::log(v);
                dI(r, c) = d / v - d * d / (Real(2) * v * v) + Real(1) / (Real(2) * v);
                break;
            }
            }
        }
    return loss;
}

// Amplitude L1 + isotropic TV on |O| = sqrt(Re^2 + Im^2 + eps^2), forward
// differences, eps-smoothed. Adds d(loss)/dconj(O) into `grads` (one array
// per stack entry) and returns the scalar contribution.
template <class Real>
Real tv_l1_regularize(const ModalStack<Real>& O, double w_l1, double w_tv, double epsilon,
                      std::vector<CArr<Real>>* grads) {
    if (w_l1 < 0 || w_tv < 0) throw InvalidArgumentError("regularizer weights must be >= 0");
    if (grads && grads->size() != O.fields.size())
        throw InvalidArgumentError("regularizer gradient buffers do not match the stack");
    if (w_l1 == 0 && w_tv == 0) return 0;
    const Real eps = Real(epsilon);
    const Real e2 = eps * eps;
    Real total = 0;
    const int ny = O.grid.ny, nx = O.grid.nx;
    for (std::size_t j = 0; j < O.fields.size(); ++j) {
        const CArr<Real>& f = O.fields[j];
        RArr<Real> amp = (f.abs2() + e2).sqrt();
        RArr<Real> damp = RArr<Real>::Zero(ny, nx); // d(loss)/d(amp)
        if (w_l1 > 0) {
            total += Real(w_l1) * amp.sum();
            damp += Real(w_l1);
        }
        if (w_tv > 0) {
            for (int r = 0; r < ny; ++r)
                for (int c = 0; c < nx; ++c) {
                    const Real dx = c + 1 < nx ? amp(r, c + 1) - amp(r, c) : Real(0);
                    const Real dy = r + 1 < ny ? amp(r + 1, c) - amp(r, c) : Real(0);
                    const Real t = std::sqrt(dx * dx + dy * dy + e2);
                    total += Real(w_tv) * t;
                    if (c + 1 < nx) {
                        damp(r, c + 1) += Real(w_tv) * dx / t;
                        damp(r, c) -= Real(w_tv) * dx / t;
                    }
                    if (r + 1 < ny) {
                        damp(r + 1, c) += Real(w_tv) * dy / t;
                        damp(r, c) -= Real(w_tv) * dy / t;
                    }
                }
        }
        if (grads) (*grads)[j] += (damp / (Real(2) * amp)).template cast<Cpx<Real>>() * f;
    }
    return total;
}

} // namespace ptycho
