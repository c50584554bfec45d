#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "oflow/common.hpp"

namespace oflow {

/// Cubic isotropic voxel grid. Desk-scale default is 24^3 at 0.5 mm.
struct GridShape {
    int nx = 0, ny = 0, nz = 0;
    double spacing_mm = 0.5;

    GridShape() = default;
    GridShape(int n, double spacing = 0.5) : nx(n), ny(n), nz(n), spacing_mm(spacing) {
        validate();
    }
    GridShape(int x, int y, int z, double spacing) : nx(x), ny(y), nz(z), spacing_mm(spacing) {
        validate();
    }

    void validate() const {
        if (nx <= 0 || ny <= 0 || nz <= 0) throw std::invalid_argument("GridShape: voxel counts must be positive");
        if (!(spacing_mm > 0.0)) throw std::invalid_argument("GridShape: spacing must be positive");
    }

    size_t voxels() const { return static_cast<size_t>(nx) * ny * nz; }
    bool operator==(const GridShape& o) const {
        return nx == o.nx && ny == o.ny && nz == o.nz && spacing_mm == o.spacing_mm;
    }
    bool operator!=(const GridShape& o) const { return !(*this == o); }

    // Row-major, k fastest.
    size_t index(int i, int j, int k) const {
        return (static_cast<size_t>(i) * ny + j) * nz + k;
    }
};

struct VoxelIndex {
    int i = 0, j = 0, k = 0;
};

enum class ScalarRole { intensity, velocity };
enum class VectorRole { displacement, svf, image_velocity };

inline std::string to_string(ScalarRole r) {
    return r == ScalarRole::intensity ? "intensity" : "velocity";
}
inline std::string to_string(VectorRole r) {
    switch (r) {
        case VectorRole::displacement: return "displacement";
        case VectorRole::svf: return "svf";
        default: return "image_velocity";
    }
}

/// Dense scalar grid (HU for intensities, HU per unit transport time when the
/// role is velocity).
struct ScalarVolume {
    GridShape shape;
    ScalarRole role = ScalarRole::intensity;
    std::vector<double> data;

    ScalarVolume() = default;
    explicit ScalarVolume(const GridShape& s, double fill = 0.0, ScalarRole r = ScalarRole::intensity)
        : shape(s), role(r), data(s.voxels(), fill) {}

    double& at(int i, int j, int k) { return data[shape.index(i, j, k)]; }
    double at(int i, int j, int k) const { return data[shape.index(i, j, k)]; }
    size_t size() const { return data.size(); }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
    double min_value() const {
        double m = data.empty() ? 0.0 : data[0];
        for (double v : data) m = std::min(m, v);
        return m;
    }
    double max_value() const {
        double m = data.empty() ? 0.0 : data[0];
        for (double v : data) m = std::max(m, v);
        return m;
    }
    void window_hu() {
        for (double& v : data) v = clamp_hu(v);
    }
};

/// Dense 3-vector grid. Displacements and SVFs are in voxel units; the role is
/// fixed at construction and checked by consumers.
struct VectorField3 {
    GridShape shape;
    VectorRole role = VectorRole::displacement;
    std::vector<double> data;  // interleaved (vx, vy, vz)

    VectorField3() = default;
    VectorField3(const GridShape& s, VectorRole r) : shape(s), role(r), data(s.voxels() * 3, 0.0) {}

    double* vec(int i, int j, int k) { return &data[3 * shape.index(i, j, k)]; }
    const double* vec(int i, int j, int k) const { return &data[3 * shape.index(i, j, k)]; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }
    double max_norm() const {
        double m = 0.0;
        for (size_t p = 0; p < data.size(); p += 3) {
            const double n2 = data[p] * data[p] + data[p + 1] * data[p + 1] + data[p + 2] * data[p + 2];
            m = std::max(m, n2);
        }
        return std::sqrt(m);
    }
};

namespace detail {

struct CellWeights {
    int i0, j0, k0;            // base corner (valid, i0 <= n-2 unless axis has 1 voxel)
    double fx, fy, fz;         // fractional offsets in [0,1]
    bool clamped_x, clamped_y, clamped_z;
};

inline CellWeights locate(const GridShape& s, double x, double y, double z) {
    CellWeights c{};
    auto clampc = [](double v, int n, int& i0, double& f, bool& clamped) {
        double cv = v;
        clamped = false;
        if (cv < 0.0) { cv = 0.0; clamped = true; }
        const double hi = static_cast<double>(n - 1);
        if (cv > hi) { cv = hi; clamped = true; }
        if (n == 1) { i0 = 0; f = 0.0; return; }
        int b = static_cast<int>(std::floor(cv));
        if (b > n - 2) b = n - 2;
        i0 = b;
        f = cv - b;
    };
    clampc(x, s.nx, c.i0, c.fx, c.clamped_x);
    clampc(y, s.ny, c.j0, c.fy, c.clamped_y);
    clampc(z, s.nz, c.k0, c.fz, c.clamped_z);
    return c;
}

}  // namespace detail

/// Trilinear sample at continuous voxel coordinates; out-of-bounds coordinates
/// clamp to the boundary face, so the call is total.
inline double sample_trilinear(const ScalarVolume& vol, double x, double y, double z) {
    const auto c = detail::locate(vol.shape, x, y, z);
    const GridShape& s = vol.shape;
    const int i1 = std::min(c.i0 + 1, s.nx - 1), j1 = std::min(c.j0 + 1, s.ny - 1), k1 = std::min(c.k0 + 1, s.nz - 1);
    const double v000 = vol.at(c.i0, c.j0, c.k0), v001 = vol.at(c.i0, c.j0, k1);
    const double v010 = vol.at(c.i0, j1, c.k0), v011 = vol.at(c.i0, j1, k1);
    const double v100 = vol.at(i1, c.j0, c.k0), v101 = vol.at(i1, c.j0, k1);
    const double v110 = vol.at(i1, j1, c.k0), v111 = vol.at(i1, j1, k1);
    const double gx = 1.0 - c.fx, gy = 1.0 - c.fy, gz = 1.0 - c.fz;
    return gx * (gy * (gz * v000 + c.fz * v001) + c.fy * (gz * v010 + c.fz * v011)) +
           c.fx * (gy * (gz * v100 + c.fz * v101) + c.fy * (gz * v110 + c.fz * v111));
}

/// Sample plus the spatial derivative of the interpolant at p (zero along any
/// clamped axis). The trilinear derivative jumps across cell faces; exactly on
/// an interior face the two one-sided limits are averaged, which keeps the
/// derivative mirror-symmetric (registration starts from the identity, where
/// every sample position sits on a face). Used by registration to
/// differentiate through warps.
inline double sample_trilinear_grad(const ScalarVolume& vol, double x, double y, double z,
                                    double grad[3]) {
    const auto c = detail::locate(vol.shape, x, y, z);
    const GridShape& s = vol.shape;
    const int i1 = std::min(c.i0 + 1, s.nx - 1), j1 = std::min(c.j0 + 1, s.ny - 1), k1 = std::min(c.k0 + 1, s.nz - 1);
    const double v000 = vol.at(c.i0, c.j0, c.k0), v001 = vol.at(c.i0, c.j0, k1);
    const double v010 = vol.at(c.i0, j1, c.k0), v011 = vol.at(c.i0, j1, k1);
    const double v100 = vol.at(i1, c.j0, c.k0), v101 = vol.at(i1, c.j0, k1);
    const double v110 = vol.at(i1, j1, c.k0), v111 = vol.at(i1, j1, k1);
    const double gx = 1.0 - c.fx, gy = 1.0 - c.fy, gz = 1.0 - c.fz;

    const double cz00 = gz * v000 + c.fz * v001, cz01 = gz * v010 + c.fz * v011;
    const double cz10 = gz * v100 + c.fz * v101, cz11 = gz * v110 + c.fz * v111;
    const double cy0 = gy * cz00 + c.fy * cz01, cy1 = gy * cz10 + c.fy * cz11;

    // face-interpolated value of the slice at x-index q, same (fy, fz)
    auto face_x = [&](int q) {
        const double a = gz * vol.at(q, c.j0, c.k0) + c.fz * vol.at(q, c.j0, k1);
        const double b = gz * vol.at(q, j1, c.k0) + c.fz * vol.at(q, j1, k1);
        return gy * a + c.fy * b;
    };
    auto face_y = [&](int q) {
        const double a = gz * vol.at(c.i0, q, c.k0) + c.fz * vol.at(c.i0, q, k1);
        const double b = gz * vol.at(i1, q, c.k0) + c.fz * vol.at(i1, q, k1);
        return gx * a + c.fx * b;
    };
    auto face_z = [&](int q) {
        const double a = gy * vol.at(c.i0, c.j0, q) + c.fy * vol.at(c.i0, j1, q);
        const double b = gy * vol.at(i1, c.j0, q) + c.fy * vol.at(i1, j1, q);
        return gx * a + c.fx * b;
    };

    if (c.clamped_x) grad[0] = 0.0;
    else if (c.fx == 0.0 && c.i0 > 0) grad[0] = 0.5 * ((cy1 - cy0) + (face_x(c.i0) - face_x(c.i0 - 1)));
    else grad[0] = cy1 - cy0;

    const double gy_plain = gx * (cz01 - cz00) + c.fx * (cz11 - cz10);
    if (c.clamped_y) grad[1] = 0.0;
    else if (c.fy == 0.0 && c.j0 > 0) grad[1] = 0.5 * (gy_plain + (face_y(c.j0) - face_y(c.j0 - 1)));
    else grad[1] = gy_plain;

    const double dz0 = gy * (v001 - v000) + c.fy * (v011 - v010);
    const double dz1 = gy * (v101 - v100) + c.fy * (v111 - v110);
    const double gz_plain = gx * dz0 + c.fx * dz1;
    if (c.clamped_z) grad[2] = 0.0;
    else if (c.fz == 0.0 && c.k0 > 0) grad[2] = 0.5 * (gz_plain + (face_z(c.k0) - face_z(c.k0 - 1)));
    else grad[2] = gz_plain;

    return gx * cy0 + c.fx * cy1;
}

/// Trilinear sample of a vector field, component-shared weights.
inline void sample_trilinear_vec(const VectorField3& f, double x, double y, double z, double out[3]) {
    const auto c = detail::locate(f.shape, x, y, z);
    const GridShape& s = f.shape;
    const int i1 = std::min(c.i0 + 1, s.nx - 1), j1 = std::min(c.j0 + 1, s.ny - 1), k1 = std::min(c.k0 + 1, s.nz - 1);
    const double gx = 1.0 - c.fx, gy = 1.0 - c.fy, gz = 1.0 - c.fz;
    const double w[8] = {gx * gy * gz, gx * gy * c.fz, gx * c.fy * gz, gx * c.fy * c.fz,
                         c.fx * gy * gz, c.fx * gy * c.fz, c.fx * c.fy * gz, c.fx * c.fy * c.fz};
    const double* p[8] = {f.vec(c.i0, c.j0, c.k0), f.vec(c.i0, c.j0, k1), f.vec(c.i0, j1, c.k0), f.vec(c.i0, j1, k1),
                          f.vec(i1, c.j0, c.k0), f.vec(i1, c.j0, k1), f.vec(i1, j1, c.k0), f.vec(i1, j1, k1)};
    out[0] = out[1] = out[2] = 0.0;
    for (int q = 0; q < 8; ++q) {
        out[0] += w[q] * p[q][0];
        out[1] += w[q] * p[q][1];
        out[2] += w[q] * p[q][2];
    }
}

/// Backward warp: out(w) = sample(vol, w + disp(w)). Pull convention, so it
/// composes with scaling-and-squaring and cannot create holes.
inline ScalarVolume warp(const ScalarVolume& vol, const VectorField3& disp) {
    if (vol.shape != disp.shape) throw std::invalid_argument("warp: shape mismatch");
    if (disp.role != VectorRole::displacement)
        throw std::invalid_argument("warp: field role must be displacement");
    ScalarVolume out(vol.shape, 0.0, vol.role);
    const GridShape& s = vol.shape;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < s.nx; ++i) {
        for (int j = 0; j < s.ny; ++j) {
            for (int k = 0; k < s.nz; ++k) {
                const double* d = disp.vec(i, j, k);
                out.at(i, j, k) = sample_trilinear(vol, i + d[0], j + d[1], k + d[2]);
            }
        }
    }
    return out;
}

struct Mat3 {
    double m[3][3] = {};
};

/// Per-voxel Jacobian of a vector field: central differences in the interior,
/// one-sided at faces, derivative taken w.r.t. voxel index.
inline std::vector<Mat3> spatial_gradient(const VectorField3& f) {
    const GridShape& s = f.shape;
    if (s.nx < 3 || s.ny < 3 || s.nz < 3)
        throw std::invalid_argument("spatial_gradient: grid must be at least 3 per axis");
    std::vector<Mat3> jac(s.voxels());
#pragma omp parallel for schedule(static)
    for (int i = 0; i < s.nx; ++i) {
        for (int j = 0; j < s.ny; ++j) {
            for (int k = 0; k < s.nz; ++k) {
                Mat3& J = jac[s.index(i, j, k)];
                for (int a = 0; a < 3; ++a) {
                    // d/dx
                    if (i == 0) J.m[a][0] = f.vec(1, j, k)[a] - f.vec(0, j, k)[a];
                    else if (i == s.nx - 1) J.m[a][0] = f.vec(i, j, k)[a] - f.vec(i - 1, j, k)[a];
                    else J.m[a][0] = 0.5 * (f.vec(i + 1, j, k)[a] - f.vec(i - 1, j, k)[a]);
                    // d/dy
                    if (j == 0) J.m[a][1] = f.vec(i, 1, k)[a] - f.vec(i, 0, k)[a];
                    else if (j == s.ny - 1) J.m[a][1] = f.vec(i, j, k)[a] - f.vec(i, j - 1, k)[a];
                    else J.m[a][1] = 0.5 * (f.vec(i, j + 1, k)[a] - f.vec(i, j - 1, k)[a]);
                    // d/dz
                    if (k == 0) J.m[a][2] = f.vec(i, j, 1)[a] - f.vec(i, j, 0)[a];
                    else if (k == s.nz - 1) J.m[a][2] = f.vec(i, j, k)[a] - f.vec(i, j, k - 1)[a];
                    else J.m[a][2] = 0.5 * (f.vec(i, j, k + 1)[a] - f.vec(i, j, k - 1)[a]);
                }
            }
        }
    }
    return jac;
}

/// Image-space velocity (b - a) / dt. Scalar per voxel: intensity rate, not a
/// spatial vector.
inline ScalarVolume finite_velocity(const ScalarVolume& a, const ScalarVolume& b, double dt) {
    if (a.shape != b.shape) throw std::invalid_argument("finite_velocity: shape mismatch");
    if (!(dt > 0.0)) throw std::invalid_argument("finite_velocity: dt must be positive");
    ScalarVolume v(a.shape, 0.0, ScalarRole::velocity);
    const double inv = 1.0 / dt;
    for (size_t p = 0; p < a.data.size(); ++p) v.data[p] = (b.data[p] - a.data[p]) * inv;
    return v;
}

inline ScalarVolume axpy(const ScalarVolume& x, double alpha, const ScalarVolume& y) {
    if (x.shape != y.shape) throw std::invalid_argument("axpy: shape mismatch");
    ScalarVolume out = x;
    for (size_t p = 0; p < out.data.size(); ++p) out.data[p] += alpha * y.data[p];
    return out;
}

inline double max_abs_diff(const ScalarVolume& a, const ScalarVolume& b) {
    double m = 0.0;
    for (size_t p = 0; p < a.data.size(); ++p) m = std::max(m, std::fabs(a.data[p] - b.data[p]));
    return m;
}

}  // namespace oflow
