#pragma once

// Dense 3D convolution primitives for the student network: channels-first
// tensors, 3x3x3 kernels with zero padding, stride 1 or 2, nearest-neighbor
// 2x upsampling, SiLU. Forward paths and their exact adjoints; every output
// element has a single writer so the OpenMP loops are deterministic.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace oflow {

struct Tensor {
    int C = 0, nx = 0, ny = 0, nz = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int c, int x, int y, int z)
        : C(c), nx(x), ny(y), nz(z), v(static_cast<size_t>(c) * x * y * z, 0.0) {}

    size_t idx(int c, int i, int j, int k) const {
        return ((static_cast<size_t>(c) * nx + i) * ny + j) * static_cast<size_t>(nz) + k;
    }
    double* row(int c, int i, int j) { return &v[idx(c, i, j, 0)]; }
    const double* row(int c, int i, int j) const { return &v[idx(c, i, j, 0)]; }
    size_t size() const { return v.size(); }
    void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

namespace nn {

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
inline double silu_deriv(double x) {
    const double s = 1.0 / (1.0 + std::exp(-x));
    return s * (1.0 + x * (1.0 - s));
}

inline void silu_forward(const Tensor& in, Tensor& out) {
    out = Tensor(in.C, in.nx, in.ny, in.nz);
    for (size_t p = 0; p < in.v.size(); ++p) out.v[p] = silu(in.v[p]);
}

/// gin += gout * silu'(pre)
inline void silu_backward(const Tensor& pre, const Tensor& gout, Tensor& gin) {
    for (size_t p = 0; p < pre.v.size(); ++p) gin.v[p] += gout.v[p] * silu_deriv(pre.v[p]);
}

// Weight layout: W[((co*Cin + ci)*3 + di)*3 + dj)*3 + dk], pad 1.
inline size_t conv3_weight_count(int cin, int cout) { return static_cast<size_t>(cout) * cin * 27; }

inline void conv3_forward(const Tensor& in, Tensor& out, const double* W, const double* bias,
                          int cout, int stride) {
    const int cin = in.C;
    const int ox = stride == 1 ? in.nx : (in.nx - 1) / 2 + 1;
    const int oy = stride == 1 ? in.ny : (in.ny - 1) / 2 + 1;
    const int oz = stride == 1 ? in.nz : (in.nz - 1) / 2 + 1;
    out = Tensor(cout, ox, oy, oz);
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < cout; ++co) {
        for (int io = 0; io < ox; ++io) {
            std::vector<double> acc(oz);
            for (int jo = 0; jo < oy; ++jo) {
                std::fill(acc.begin(), acc.end(), bias[co]);
                for (int ci = 0; ci < cin; ++ci) {
                    for (int di = 0; di < 3; ++di) {
                        const int ii = stride * io + di - 1;
                        if (ii < 0 || ii >= in.nx) continue;
                        for (int dj = 0; dj < 3; ++dj) {
                            const int jj = stride * jo + dj - 1;
                            if (jj < 0 || jj >= in.ny) continue;
                            const double* src = in.row(ci, ii, jj);
                            const double* w3 = &W[(((static_cast<size_t>(co) * cin + ci) * 3 + di) * 3 + dj) * 3];
                            if (stride == 1) {
                                for (int dk = 0; dk < 3; ++dk) {
                                    const double w = w3[dk];
                                    const int shift = dk - 1;
                                    const int k0 = shift < 0 ? 1 : 0;
                                    const int k1 = shift > 0 ? oz - 1 : oz;
                                    for (int k = k0; k < k1; ++k) acc[k] += w * src[k + shift];
                                }
                            } else {
                                for (int dk = 0; dk < 3; ++dk) {
                                    const double w = w3[dk];
                                    for (int k = 0; k < oz; ++k) {
                                        const int kk = 2 * k + dk - 1;
                                        if (kk >= 0 && kk < in.nz) acc[k] += w * src[kk];
                                    }
                                }
                            }
                        }
                    }
                }
                double* dst = out.row(co, io, jo);
                for (int k = 0; k < oz; ++k) dst[k] = acc[k];
            }
        }
    }
}

/// gin += adjoint of conv3_forward w.r.t. the input.
inline void conv3_backward_input(Tensor& gin, const Tensor& gout, const double* W, int cout,
                                 int stride) {
    const int cin = gin.C;
#pragma omp parallel for collapse(2) schedule(static)
    for (int ci = 0; ci < cin; ++ci) {
        for (int i = 0; i < gin.nx; ++i) {
            for (int j = 0; j < gin.ny; ++j) {
                double* dst = gin.row(ci, i, j);
                for (int co = 0; co < cout; ++co) {
                    for (int di = 0; di < 3; ++di) {
                        const int oi2 = i - di + 1;
                        int oi = oi2;
                        if (stride == 2) {
                            if (oi2 < 0 || (oi2 & 1)) continue;
                            oi = oi2 / 2;
                        }
                        if (oi < 0 || oi >= gout.nx) continue;
                        for (int dj = 0; dj < 3; ++dj) {
                            const int oj2 = j - dj + 1;
                            int oj = oj2;
                            if (stride == 2) {
                                if (oj2 < 0 || (oj2 & 1)) continue;
                                oj = oj2 / 2;
                            }
                            if (oj < 0 || oj >= gout.ny) continue;
                            const double* gsrc = gout.row(co, oi, oj);
                            const double* w3 = &W[(((static_cast<size_t>(co) * cin + ci) * 3 + di) * 3 + dj) * 3];
                            if (stride == 1) {
                                for (int dk = 0; dk < 3; ++dk) {
                                    const double w = w3[dk];
                                    const int shift = 1 - dk;  // ok = k - dk + 1 = k + shift
                                    const int k0 = shift < 0 ? -shift : 0;
                                    const int k1 = shift > 0 ? gin.nz - shift : gin.nz;
                                    for (int k = k0; k < k1; ++k) dst[k] += w * gsrc[k + shift];
                                }
                            } else {
                                for (int dk = 0; dk < 3; ++dk) {
                                    const double w = w3[dk];
                                    for (int k = 0; k < gin.nz; ++k) {
                                        const int ok2 = k - dk + 1;
                                        if (ok2 < 0 || (ok2 & 1)) continue;
                                        const int ok = ok2 / 2;
                                        if (ok < gout.nz) dst[k] += w * gsrc[ok];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// gW += dL/dW, gB += dL/dbias.
inline void conv3_backward_params(double* gW, double* gB, const Tensor& in, const Tensor& gout,
                                  int stride) {
    const int cin = in.C, cout = gout.C;
#pragma omp parallel for collapse(2) schedule(static)
    for (int co = 0; co < cout; ++co) {
        for (int ci = 0; ci < cin; ++ci) {
            for (int di = 0; di < 3; ++di) {
                for (int dj = 0; dj < 3; ++dj) {
                    for (int dk = 0; dk < 3; ++dk) {
                        double acc = 0.0;
                        for (int io = 0; io < gout.nx; ++io) {
                            const int ii = stride * io + di - 1;
                            if (ii < 0 || ii >= in.nx) continue;
                            for (int jo = 0; jo < gout.ny; ++jo) {
                                const int jj = stride * jo + dj - 1;
                                if (jj < 0 || jj >= in.ny) continue;
                                const double* gsrc = gout.row(co, io, jo);
                                const double* src = in.row(ci, ii, jj);
                                if (stride == 1) {
                                    const int shift = dk - 1;
                                    const int k0 = shift < 0 ? 1 : 0;
                                    const int k1 = shift > 0 ? gout.nz - 1 : gout.nz;
                                    for (int k = k0; k < k1; ++k) acc += gsrc[k] * src[k + shift];
                                } else {
                                    for (int k = 0; k < gout.nz; ++k) {
                                        const int kk = 2 * k + dk - 1;
                                        if (kk >= 0 && kk < in.nz) acc += gsrc[k] * src[kk];
                                    }
                                }
                            }
                        }
                        gW[(((static_cast<size_t>(co) * cin + ci) * 3 + di) * 3 + dj) * 3 + dk] += acc;
                    }
                }
            }
        }
    }
    for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        const size_t base = static_cast<size_t>(co) * gout.nx * gout.ny * gout.nz;
        for (size_t p = 0; p < static_cast<size_t>(gout.nx) * gout.ny * gout.nz; ++p)
            acc += gout.v[base + p];
        gB[co] += acc;
    }
}

inline void conv1x1_forward(const Tensor& in, Tensor& out, const double* W, const double* bias,
                            int cout) {
    out = Tensor(cout, in.nx, in.ny, in.nz);
    const size_t n = static_cast<size_t>(in.nx) * in.ny * in.nz;
    for (int co = 0; co < cout; ++co) {
        double* dst = &out.v[static_cast<size_t>(co) * n];
        for (size_t p = 0; p < n; ++p) dst[p] = bias[co];
        for (int ci = 0; ci < in.C; ++ci) {
            const double w = W[static_cast<size_t>(co) * in.C + ci];
            const double* src = &in.v[static_cast<size_t>(ci) * n];
            for (size_t p = 0; p < n; ++p) dst[p] += w * src[p];
        }
    }
}

inline void conv1x1_backward(Tensor& gin, double* gW, double* gB, const Tensor& in,
                             const Tensor& gout, const double* W, int cout) {
    const size_t n = static_cast<size_t>(in.nx) * in.ny * in.nz;
    for (int co = 0; co < cout; ++co) {
        const double* g = &gout.v[static_cast<size_t>(co) * n];
        double bacc = 0.0;
        for (size_t p = 0; p < n; ++p) bacc += g[p];
        gB[co] += bacc;
        for (int ci = 0; ci < in.C; ++ci) {
            const double* src = &in.v[static_cast<size_t>(ci) * n];
            double* gi = &gin.v[static_cast<size_t>(ci) * n];
            const double w = W[static_cast<size_t>(co) * in.C + ci];
            double wacc = 0.0;
            for (size_t p = 0; p < n; ++p) {
                wacc += g[p] * src[p];
                gi[p] += w * g[p];
            }
            gW[static_cast<size_t>(co) * in.C + ci] += wacc;
        }
    }
}

/// out[c][i][j][k] = in[c][i/2][j/2][k/2]
inline void upsample2_forward(const Tensor& in, Tensor& out) {
    out = Tensor(in.C, in.nx * 2, in.ny * 2, in.nz * 2);
#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < in.C; ++c) {
        for (int i = 0; i < out.nx; ++i) {
            for (int j = 0; j < out.ny; ++j) {
                double* dst = out.row(c, i, j);
                const double* src = in.row(c, i / 2, j / 2);
                for (int k = 0; k < out.nz; ++k) dst[k] = src[k / 2];
            }
        }
    }
}

/// gin += sum over the 2x2x2 children (gather per input voxel).
inline void upsample2_backward(Tensor& gin, const Tensor& gout) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < gin.C; ++c) {
        for (int i = 0; i < gin.nx; ++i) {
            for (int j = 0; j < gin.ny; ++j) {
                double* dst = gin.row(c, i, j);
                for (int oi = 2 * i; oi < 2 * i + 2; ++oi) {
                    for (int oj = 2 * j; oj < 2 * j + 2; ++oj) {
                        const double* src = gout.row(c, oi, oj);
                        for (int k = 0; k < gin.nz; ++k) dst[k] += src[2 * k] + src[2 * k + 1];
                    }
                }
            }
        }
    }
}

}  // namespace nn
}  // namespace oflow
