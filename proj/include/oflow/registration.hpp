#pragma once

// Per-pair teacher fitting: gradient descent with momentum and backtracking on
// the bone-weighted endpoint MSE plus a smoothness penalty, differentiated
// exactly through the scaling-and-squaring recursion by reverse accumulation.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "oflow/common.hpp"
#include "oflow/metrics.hpp"
#include "oflow/svf.hpp"
#include "oflow/volume.hpp"

namespace oflow {

struct RegistrationConfig {
    int iters = 200;
    double step_size = 0.05;
    double lambda_smooth = 0.1;  // applied after unit-balancing by the HU window width
    int K = -1;                  // squaring steps; -1 selects per-field
    ScalarVolume weight_map;     // the W of the image loss, from the Day-5 volume
    uint64_t seed = 0;

    void validate() const {
        if (iters <= 0) throw std::invalid_argument("RegistrationConfig: iters must be positive");
        if (!(step_size > 0.0)) throw std::invalid_argument("RegistrationConfig: step_size must be positive");
        if (lambda_smooth < 0.0) throw std::invalid_argument("RegistrationConfig: lambda_smooth must be >= 0");
    }
};

struct RegistrationReport {
    std::vector<double> loss_history;
    double final_weighted_mse = 0.0;
    double endpoint_mae_bone = 0.0;
    double jacobian_positive_fraction = 0.0;
    int iters_run = 0;
};

namespace detail {

// One trilinear cell lookup for the adjoint scatter: corner flat indices and
// weights. The weights are continuous, so no face handling is needed here.
struct CellSample {
    size_t corner[8];
    double w[8];
};

inline CellSample cell_sample(const GridShape& s, double x, double y, double z) {
    const CellWeights c = locate(s, x, y, z);
    CellSample cs;
    const int i1 = std::min(c.i0 + 1, s.nx - 1), j1 = std::min(c.j0 + 1, s.ny - 1),
              k1 = std::min(c.k0 + 1, s.nz - 1);
    const int ii[2] = {c.i0, i1}, jj[2] = {c.j0, j1}, kk[2] = {c.k0, k1};
    const double fx[2] = {1.0 - c.fx, c.fx}, fy[2] = {1.0 - c.fy, c.fy}, fz[2] = {1.0 - c.fz, c.fz};
    int q = 0;
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            for (int d = 0; d < 2; ++d, ++q) {
                cs.corner[q] = s.index(ii[a], jj[b], kk[d]);
                cs.w[q] = fx[a] * fy[b] * fz[d];
            }
    return cs;
}

// Jacobian of the trilinear vector interpolant w.r.t. the sample position,
// with the same averaged one-sided limits on interior cell faces as
// sample_trilinear_grad and zeros along clamped axes.
inline void vec_interp_jacobian(const VectorField3& f, double x, double y, double z,
                                double J[3][3]) {
    const GridShape& s = f.shape;
    const CellWeights c = locate(s, x, y, z);
    const int i1 = std::min(c.i0 + 1, s.nx - 1), j1 = std::min(c.j0 + 1, s.ny - 1),
              k1 = std::min(c.k0 + 1, s.nz - 1);
    const double gx = 1.0 - c.fx, gy = 1.0 - c.fy, gz = 1.0 - c.fz;
    auto face_x = [&](int q, int a) {
        const double lo = gz * f.vec(q, c.j0, c.k0)[a] + c.fz * f.vec(q, c.j0, k1)[a];
        const double hi = gz * f.vec(q, j1, c.k0)[a] + c.fz * f.vec(q, j1, k1)[a];
        return gy * lo + c.fy * hi;
    };
    auto face_y = [&](int q, int a) {
        const double lo = gz * f.vec(c.i0, q, c.k0)[a] + c.fz * f.vec(c.i0, q, k1)[a];
        const double hi = gz * f.vec(i1, q, c.k0)[a] + c.fz * f.vec(i1, q, k1)[a];
        return gx * lo + c.fx * hi;
    };
    auto face_z = [&](int q, int a) {
        const double lo = gy * f.vec(c.i0, c.j0, q)[a] + c.fy * f.vec(c.i0, j1, q)[a];
        const double hi = gy * f.vec(i1, c.j0, q)[a] + c.fy * f.vec(i1, j1, q)[a];
        return gx * lo + c.fx * hi;
    };
    for (int a = 0; a < 3; ++a) {
        if (c.clamped_x) J[a][0] = 0.0;
        else if (c.fx == 0.0 && c.i0 > 0)
            J[a][0] = 0.5 * ((face_x(i1, a) - face_x(c.i0, a)) + (face_x(c.i0, a) - face_x(c.i0 - 1, a)));
        else J[a][0] = face_x(i1, a) - face_x(c.i0, a);
        if (c.clamped_y) J[a][1] = 0.0;
        else if (c.fy == 0.0 && c.j0 > 0)
            J[a][1] = 0.5 * ((face_y(j1, a) - face_y(c.j0, a)) + (face_y(c.j0, a) - face_y(c.j0 - 1, a)));
        else J[a][1] = face_y(j1, a) - face_y(c.j0, a);
        if (c.clamped_z) J[a][2] = 0.0;
        else if (c.fz == 0.0 && c.k0 > 0)
            J[a][2] = 0.5 * ((face_z(k1, a) - face_z(c.k0, a)) + (face_z(c.k0, a) - face_z(c.k0 - 1, a)));
        else J[a][2] = face_z(k1, a) - face_z(c.k0, a);
    }
}

// Reverse accumulation through one composition d' = d o d. Given the upstream
// gradient u = dL/dd', accumulates dL/dd. Contributions: the direct term, the
// interpolant's dependence on the sample position, and the scatter onto the
// interpolated corner values.
inline VectorField3 compose_backward(const VectorField3& d, const VectorField3& u) {
    const GridShape& s = d.shape;
    VectorField3 g(s, VectorRole::displacement);
    for (int i = 0; i < s.nx; ++i)
        for (int j = 0; j < s.ny; ++j)
            for (int k = 0; k < s.nz; ++k) {
                const double* dv = d.vec(i, j, k);
                const double* uv = u.vec(i, j, k);
                const double px = i + dv[0], py = j + dv[1], pz = k + dv[2];
                const CellSample cs = cell_sample(s, px, py, pz);
                double J[3][3];
                vec_interp_jacobian(d, px, py, pz, J);
                double* gv = g.vec(i, j, k);
                for (int b = 0; b < 3; ++b) {
                    double acc = uv[b];  // direct term
                    for (int a = 0; a < 3; ++a) acc += uv[a] * J[a][b];
                    gv[b] += acc;
                }
                // scatter onto the corners of the interpolated copy
                for (int q = 0; q < 8; ++q) {
                    double* gc = &g.data[3 * cs.corner[q]];
                    for (int a = 0; a < 3; ++a) gc[a] += cs.w[q] * uv[a];
                }
            }
    return g;
}

struct RegLossGrad {
    double total = 0.0;
    double data_term = 0.0;
    double smooth_term = 0.0;
    VectorField3 grad;  // dL/dv, empty unless requested
};

// Unit balance between the voxel-unit smoothness penalty and the HU^2 data
// term: a characteristic bone-edge gradient of 400 HU per voxel. With this
// scale the default lambda of 0.1 keeps fitted warps fold-free without
// starving the data term.
inline constexpr double kSmoothHuScale = 400.0;

// Smoothness value and gradient: lambda * scale^2 * mean Frobenius norm of
// the per-voxel Jacobian (central interior, one-sided faces).
inline void smooth_value_grad(const VectorField3& v, double lambda_eff, double& value,
                              VectorField3* grad) {
    const GridShape& s = v.shape;
    const auto jac = spatial_gradient(v);
    double acc = 0.0;
    for (const Mat3& J : jac)
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) acc += J.m[a][b] * J.m[a][b];
    const double invn = 1.0 / static_cast<double>(s.voxels());
    value = lambda_eff * acc * invn;
    if (!grad) return;
    // adjoint of the difference operator applied to 2*lambda_eff*J/N
    const double c = 2.0 * lambda_eff * invn;
    auto add = [&](int i, int j, int k, int a, double val) { grad->vec(i, j, k)[a] += val; };
    for (int i = 0; i < s.nx; ++i)
        for (int j = 0; j < s.ny; ++j)
            for (int k = 0; k < s.nz; ++k) {
                const Mat3& J = jac[s.index(i, j, k)];
                for (int a = 0; a < 3; ++a) {
                    const double yx = c * J.m[a][0], yy = c * J.m[a][1], yz = c * J.m[a][2];
                    if (i == 0) {
                        add(1, j, k, a, yx);
                        add(0, j, k, a, -yx);
                    } else if (i == s.nx - 1) {
                        add(i, j, k, a, yx);
                        add(i - 1, j, k, a, -yx);
                    } else {
                        add(i + 1, j, k, a, 0.5 * yx);
                        add(i - 1, j, k, a, -0.5 * yx);
                    }
                    if (j == 0) {
                        add(i, 1, k, a, yy);
                        add(i, 0, k, a, -yy);
                    } else if (j == s.ny - 1) {
                        add(i, j, k, a, yy);
                        add(i, j - 1, k, a, -yy);
                    } else {
                        add(i, j + 1, k, a, 0.5 * yy);
                        add(i, j - 1, k, a, -0.5 * yy);
                    }
                    if (k == 0) {
                        add(i, j, 1, a, yz);
                        add(i, j, 0, a, -yz);
                    } else if (k == s.nz - 1) {
                        add(i, j, k, a, yz);
                        add(i, j, k - 1, a, -yz);
                    } else {
                        add(i, j, k + 1, a, 0.5 * yz);
                        add(i, j, k - 1, a, -0.5 * yz);
                    }
                }
            }
}

inline RegLossGrad registration_loss(const VectorField3& v, const ScalarVolume& x_d5,
                                     const ScalarVolume& x_y1, const ScalarVolume& W,
                                     double lambda_smooth, int K_fixed, bool want_grad) {
    const GridShape& s = v.shape;
    StationaryVelocityField svf;
    svf.v = v;
    svf.v.role = VectorRole::svf;
    const int K = K_fixed >= 0 ? K_fixed : squaring_steps_for(svf);

    // forward exp with cached intermediates d_0 .. d_K
    std::vector<VectorField3> ds;
    ds.reserve(K + 1);
    VectorField3 d0(s, VectorRole::displacement);
    const double scale = std::ldexp(1.0, -K);
    for (size_t p = 0; p < d0.data.size(); ++p) d0.data[p] = scale * v.data[p];
    ds.push_back(d0);
    for (int q = 0; q < K; ++q) ds.push_back(compose_displacements(ds.back(), ds.back()));
    const VectorField3& D = ds.back();

    RegLossGrad out;
    const double invn = 1.0 / static_cast<double>(s.voxels());
    VectorField3 gD(s, VectorRole::displacement);
    double data = 0.0;
    for (int i = 0; i < s.nx; ++i)
        for (int j = 0; j < s.ny; ++j)
            for (int k = 0; k < s.nz; ++k) {
                const size_t p = s.index(i, j, k);
                const double* dv = D.vec(i, j, k);
                double gpos[3];
                const double warped =
                    sample_trilinear_grad(x_d5, i + dv[0], j + dv[1], k + dv[2], gpos);
                const double r = W.data[p] * (warped - x_y1.data[p]);
                data += r * r;
                if (want_grad) {
                    const double u = 2.0 * W.data[p] * r * invn;
                    double* g = gD.vec(i, j, k);
                    g[0] = u * gpos[0];
                    g[1] = u * gpos[1];
                    g[2] = u * gpos[2];
                }
            }
    out.data_term = data * invn;

    const double lambda_eff = lambda_smooth * kSmoothHuScale * kSmoothHuScale;
    if (want_grad) {
        out.grad = VectorField3(s, VectorRole::svf);
        // back through the squarings
        VectorField3 u = gD;
        for (int q = K - 1; q >= 0; --q) u = compose_backward(ds[static_cast<size_t>(q)], u);
        for (size_t p = 0; p < u.data.size(); ++p) out.grad.data[p] = scale * u.data[p];
        double sval = 0.0;
        if (lambda_smooth > 0.0) {
            smooth_value_grad(v, lambda_eff, sval, &out.grad);
        }
        out.smooth_term = sval;
    } else if (lambda_smooth > 0.0) {
        smooth_value_grad(v, lambda_eff, out.smooth_term, nullptr);
    }
    out.total = out.data_term + out.smooth_term;
    return out;
}

}  // namespace detail

/// Fit the per-pair teacher SVF so warp(x_d5, exp(v)) matches x_y1 under the
/// bone-weighted loss. Heavy-ball descent; the step halves (up to 20 times)
/// whenever a candidate would increase the loss, so the history is
/// non-increasing.
inline std::pair<StationaryVelocityField, RegistrationReport> fit_teacher(
    const ScalarVolume& x_d5, const ScalarVolume& x_y1, const RegistrationConfig& cfg) {
    cfg.validate();
    if (x_d5.shape != x_y1.shape) throw std::invalid_argument("fit_teacher: shape mismatch");
    if (cfg.weight_map.shape != x_d5.shape)
        throw std::invalid_argument("fit_teacher: weight map shape mismatch");
    const GridShape& s = x_d5.shape;

    VectorField3 v(s, VectorRole::svf);  // identity start
    VectorField3 momentum(s, VectorRole::svf);
    const double beta = 0.9;
    double lr = cfg.step_size;
    const double lr0 = cfg.step_size;

    RegistrationReport report;
    detail::RegLossGrad cur =
        detail::registration_loss(v, x_d5, x_y1, cfg.weight_map, cfg.lambda_smooth, cfg.K, true);
    if (std::isnan(cur.total)) throw NumericError("fit_teacher: NaN loss at start");
    report.loss_history.push_back(cur.total);

    for (int it = 0; it < cfg.iters; ++it) {
        for (size_t p = 0; p < momentum.data.size(); ++p)
            momentum.data[p] = beta * momentum.data[p] + cur.grad.data[p];
        VectorField3 cand = v;
        for (size_t p = 0; p < cand.data.size(); ++p) cand.data[p] -= lr * momentum.data[p];
        detail::RegLossGrad next =
            detail::registration_loss(cand, x_d5, x_y1, cfg.weight_map, cfg.lambda_smooth, cfg.K, false);
        int backtracks = 0;
        while (next.total > cur.total && backtracks < 20) {
            lr *= 0.5;
            momentum = cur.grad;  // reset momentum on a failed step
            cand = v;
            for (size_t p = 0; p < cand.data.size(); ++p) cand.data[p] -= lr * momentum.data[p];
            next = detail::registration_loss(cand, x_d5, x_y1, cfg.weight_map, cfg.lambda_smooth,
                                             cfg.K, false);
            ++backtracks;
        }
        if (std::isnan(next.total))
            throw NumericError("fit_teacher: NaN loss at iter " + std::to_string(it));
        if (next.total > cur.total) break;  // no descent direction at this scale
        v = cand;
        cur = detail::registration_loss(v, x_d5, x_y1, cfg.weight_map, cfg.lambda_smooth, cfg.K, true);
        report.loss_history.push_back(cur.total);
        report.iters_run = it + 1;
        if (backtracks == 0) lr = std::min(lr * 1.1, lr0);
    }

    StationaryVelocityField svf;
    svf.v = std::move(v);
    svf.v.role = VectorRole::svf;
    report.final_weighted_mse = cur.data_term;
    const int K = cfg.K >= 0 ? cfg.K : squaring_steps_for(svf);
    const VectorField3 disp = exp_svf(svf, 1.0, K);
    report.jacobian_positive_fraction = jacobian_positivity(disp);
    const ScalarVolume endpoint = warp(x_d5, disp);
    report.endpoint_mae_bone =
        mae(endpoint, x_y1, detail::Region::full(s), true, kBoneThresholdHu);
    return {std::move(svf), report};
}

/// Full metric row of the fitted teacher's endpoint against the late volume.
inline MetricRow teacher_quality(const ScalarVolume& x_d5, const ScalarVolume& x_y1,
                                 const StationaryVelocityField& svf, const SlabSpec& slab) {
    const ScalarVolume endpoint = warp(x_d5, exp_svf(svf, 1.0, squaring_steps_for(svf)));
    return evaluate_pair(endpoint, x_y1, slab);
}

}  // namespace oflow
