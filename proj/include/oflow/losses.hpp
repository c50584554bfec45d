#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "oflow/common.hpp"
#include "oflow/plane.hpp"
#include "oflow/svf.hpp"
#include "oflow/volume.hpp"

namespace oflow {

/// Weights of the combined objective. lambda_lyap holds the current ramped
/// value; lambda_max is its terminal value.
struct LossWeights {
    double lambda_img = 0.2;
    double lambda_lyap = 0.0;
    double lambda_max = 1.0;
    double alpha = 1.0;
};

/// A loss value together with the gradient w.r.t. the predicted field.
struct LossResult {
    double value = 0.0;
    ScalarVolume grad;
};

namespace detail {

inline void require_same_shape(const ScalarVolume& a, const ScalarVolume& b, const char* who) {
    if (a.shape != b.shape) throw std::invalid_argument(std::string(who) + ": shape mismatch");
}

// Mean-squared error against a target, with gradient 2*(pred-target)/N.
// Mean (not sum) reduction keeps the lambda weights resolution-independent.
inline LossResult mse_against(const ScalarVolume& pred, const ScalarVolume& target, const char* who) {
    require_same_shape(pred, target, who);
    LossResult r;
    r.grad = ScalarVolume(pred.shape, 0.0, ScalarRole::velocity);
    const double invn = 1.0 / static_cast<double>(pred.data.size());
    double acc = 0.0;
    for (size_t p = 0; p < pred.data.size(); ++p) {
        const double d = pred.data[p] - target.data[p];
        acc += d * d;
        r.grad.data[p] = 2.0 * d * invn;
    }
    r.value = acc * invn;
    return r;
}

}  // namespace detail

/// Rectified-flow loss: MSE of the predicted velocity against the endpoint
/// displacement (y1 - d5).
inline LossResult loss_rf(const ScalarVolume& v_pred, const ScalarVolume& x_d5, const ScalarVolume& x_y1) {
    detail::require_same_shape(x_d5, x_y1, "loss_rf");
    ScalarVolume target(x_d5.shape, 0.0, ScalarRole::velocity);
    for (size_t p = 0; p < target.data.size(); ++p) target.data[p] = x_y1.data[p] - x_d5.data[p];
    return detail::mse_against(v_pred, target, "loss_rf");
}

/// Guidance field: teacher tangent plus proportional pull toward the teacher
/// state, v_guide = xdot* - alpha * (x - x*).
inline ScalarVolume guidance_field(const ScalarVolume& x_t, double t, const TeacherTrajectory& teacher,
                                   double alpha) {
    ScalarVolume g = teacher_tangent(teacher, t);
    ScalarVolume xs = teacher_state(teacher, t);
    detail::require_same_shape(x_t, xs, "guidance_field");
    for (size_t p = 0; p < g.data.size(); ++p) g.data[p] -= alpha * (x_t.data[p] - xs.data[p]);
    return g;
}

/// Quadratic Lyapunov energy centered on the teacher path,
/// V = alpha/2 * sum (x - x*)^2.
inline double lyapunov_energy(const ScalarVolume& x, double t, const TeacherTrajectory& teacher,
                              double alpha) {
    ScalarVolume xs = teacher_state(teacher, t);
    detail::require_same_shape(x, xs, "lyapunov_energy");
    double acc = 0.0;
    for (size_t p = 0; p < x.data.size(); ++p) {
        const double d = x.data[p] - xs.data[p];
        acc += d * d;
    }
    return 0.5 * alpha * acc;
}

/// Trajectory-distillation loss: MSE against the guidance field.
inline LossResult loss_lyap(const ScalarVolume& v_pred, const ScalarVolume& x_t, double t,
                            const TeacherTrajectory& teacher, double alpha) {
    return detail::mse_against(v_pred, guidance_field(x_t, t, teacher, alpha), "loss_lyap");
}

/// MSE teacher distillation: matches the teacher tangent alone; identical to
/// loss_lyap with alpha = 0.
inline LossResult loss_mse_distill(const ScalarVolume& v_pred, const ScalarVolume& /*x_t*/, double t,
                                   const TeacherTrajectory& teacher) {
    return detail::mse_against(v_pred, teacher_tangent(teacher, t), "loss_mse_distill");
}

/// Resection-aware weight map: Gaussian of plane distance gated by the Day-5
/// bone mask and normalized to unit maximum. An all-soft-tissue volume
/// produces an all-zero map with the flag set; callers fall back to RF+Lyap
/// training for that sample instead of crashing.
struct ResectionWeight {
    ScalarVolume W;
    double sigma_vox = 6.0;
    double tau_hu = kBoneThresholdHu;
    PlaneSpec plane;
    bool all_zero = false;
};

inline ResectionWeight resection_weight(const ScalarVolume& x_d5, double sigma_vox, double tau_hu,
                                        const PlaneSpec& plane) {
    if (!(sigma_vox > 0.0)) throw std::invalid_argument("resection_weight: sigma must be positive");
    ResectionWeight rw;
    rw.sigma_vox = sigma_vox;
    rw.tau_hu = tau_hu;
    rw.plane = plane;
    rw.W = ScalarVolume(x_d5.shape, 0.0);
    const GridShape& s = x_d5.shape;
    const double inv2s2 = 1.0 / (2.0 * sigma_vox * sigma_vox);
    double maxw = 0.0;
    for (int i = 0; i < s.nx; ++i)
        for (int j = 0; j < s.ny; ++j)
            for (int k = 0; k < s.nz; ++k) {
                if (x_d5.at(i, j, k) <= tau_hu) continue;
                const double d = plane.distance(i, j, k);
                const double w = std::exp(-d * d * inv2s2);
                rw.W.at(i, j, k) = w;
                maxw = std::max(maxw, w);
            }
    if (maxw > 0.0) {
        for (double& w : rw.W.data) w /= maxw;
    } else {
        rw.all_zero = true;
    }
    return rw;
}

/// Bone-focused endpoint loss: mean of (W * (pred - truth))^2 with gradient
/// 2*W^2*(pred - truth)/N.
inline LossResult loss_img(const ScalarVolume& x_pred_y1, const ScalarVolume& x_y1, const ScalarVolume& W) {
    detail::require_same_shape(x_pred_y1, x_y1, "loss_img");
    detail::require_same_shape(x_pred_y1, W, "loss_img");
    LossResult r;
    r.grad = ScalarVolume(x_pred_y1.shape);
    const double invn = 1.0 / static_cast<double>(x_pred_y1.data.size());
    double acc = 0.0;
    for (size_t p = 0; p < x_pred_y1.data.size(); ++p) {
        const double wd = W.data[p] * (x_pred_y1.data[p] - x_y1.data[p]);
        acc += wd * wd;
        r.grad.data[p] = 2.0 * W.data[p] * wd * invn;
    }
    r.value = acc * invn;
    return r;
}

struct LossParts {
    double rf = 0.0;
    double img = 0.0;
    double lyap = 0.0;  // holds the MSE-distillation value when that variant runs
};

/// Combined objective L = L_RF + lambda_img * L_img + lambda_lyap * L_Lyap.
inline double loss_total(const LossParts& parts, const LossWeights& w) {
    if (std::isnan(parts.rf)) throw NumericError("loss_total: L_RF is NaN");
    if (std::isnan(parts.img)) throw NumericError("loss_total: L_img is NaN");
    if (std::isnan(parts.lyap)) throw NumericError("loss_total: L_Lyap is NaN");
    return parts.rf + w.lambda_img * parts.img + w.lambda_lyap * parts.lyap;
}

}  // namespace oflow
