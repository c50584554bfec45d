#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "oflow/volume.hpp"

namespace oflow {

/// Stationary velocity field in voxel units per unit flow time.
struct StationaryVelocityField {
    VectorField3 v;

    StationaryVelocityField() = default;
    explicit StationaryVelocityField(VectorField3 field) : v(std::move(field)) {
        if (v.role != VectorRole::svf) throw std::invalid_argument("SVF: field role must be svf");
    }
    static StationaryVelocityField zero(const GridShape& s) {
        return StationaryVelocityField(VectorField3(s, VectorRole::svf));
    }
    double max_displacement() const { return v.max_norm(); }
};

/// Smallest K with 2^-K * max|v| < 0.5 voxel, floored at 4, so the first
/// squaring step stays inside the trilinear interpolation's accurate regime.
inline int squaring_steps_for(const StationaryVelocityField& svf, int floor_k = 4) {
    const double m = svf.max_displacement();
    int k = floor_k;
    while (std::ldexp(m, -k) >= 0.5 && k < 30) ++k;
    return k;
}

/// d_ab(w) = d_b(w) + interp(d_a, w + d_b(w)); displacement of (phi_a o phi_b).
inline VectorField3 compose_displacements(const VectorField3& a, const VectorField3& b) {
    if (a.shape != b.shape) throw std::invalid_argument("compose: shape mismatch");
    VectorField3 out(a.shape, VectorRole::displacement);
    const GridShape& s = a.shape;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < s.nx; ++i) {
        for (int j = 0; j < s.ny; ++j) {
            for (int k = 0; k < s.nz; ++k) {
                const double* db = b.vec(i, j, k);
                double da[3];
                sample_trilinear_vec(a, i + db[0], j + db[1], k + db[2], da);
                double* o = out.vec(i, j, k);
                o[0] = db[0] + da[0];
                o[1] = db[1] + da[1];
                o[2] = db[2] + da[2];
            }
        }
    }
    return out;
}

/// Displacement of exp(t * v) by scaling and squaring: d0 = t*v/2^K, then K
/// self-compositions.
inline VectorField3 exp_svf(const StationaryVelocityField& svf, double t, int K) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("exp_svf: t must be in [0,1]");
    if (K < 0) throw std::invalid_argument("exp_svf: K must be >= 0");
    VectorField3 d(svf.v.shape, VectorRole::displacement);
    const double scale = t * std::ldexp(1.0, -K);
    for (size_t p = 0; p < d.data.size(); ++p) d.data[p] = scale * svf.v.data[p];
    for (int s = 0; s < K; ++s) d = compose_displacements(d, d);
    return d;
}

/// Fraction of voxels with det(I + grad d) > 0; 1.0 means no folding.
inline double jacobian_positivity(const VectorField3& disp) {
    if (disp.role != VectorRole::displacement)
        throw std::invalid_argument("jacobian_positivity: role must be displacement");
    const auto jac = spatial_gradient(disp);
    size_t pos = 0;
    for (const Mat3& J : jac) {
        double a[3][3];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) a[r][c] = J.m[r][c] + (r == c ? 1.0 : 0.0);
        const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
                           a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                           a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
        if (det > 0.0) ++pos;
    }
    return static_cast<double>(pos) / static_cast<double>(jac.size());
}

/// Teacher path x*_t = warp(base, exp(t*v)) with finite-difference tangents.
struct TeacherTrajectory {
    StationaryVelocityField svf;
    ScalarVolume base;   // the early volume
    double dt_fd = 0.05; // finite-difference step
    int squaring_steps = 4;

    TeacherTrajectory() = default;
    TeacherTrajectory(StationaryVelocityField s, ScalarVolume b, double dt = 0.05, int K = -1)
        : svf(std::move(s)), base(std::move(b)), dt_fd(dt) {
        if (!(dt_fd > 0.0)) throw std::invalid_argument("TeacherTrajectory: dt_fd must be positive");
        if (svf.v.shape != base.shape) throw std::invalid_argument("TeacherTrajectory: shape mismatch");
        squaring_steps = K >= 0 ? K : squaring_steps_for(svf);
    }
};

inline ScalarVolume teacher_state(const TeacherTrajectory& traj, double t) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("teacher_state: t must be in [0,1]");
    return warp(traj.base, exp_svf(traj.svf, t, traj.squaring_steps));
}

/// Forward difference (x*_{t+dt} - x*_t)/dt; switches to a backward difference
/// near t = 1 so the path is never sampled outside [0,1].
inline ScalarVolume teacher_tangent(const TeacherTrajectory& traj, double t) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("teacher_tangent: t must be in [0,1]");
    const double dt = traj.dt_fd;
    if (t + dt <= 1.0) return finite_velocity(teacher_state(traj, t), teacher_state(traj, t + dt), dt);
    return finite_velocity(teacher_state(traj, t - dt), teacher_state(traj, t), dt);
}

}  // namespace oflow
