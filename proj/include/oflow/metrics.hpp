#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "oflow/common.hpp"
#include "oflow/volume.hpp"

namespace oflow {

/// Axis-aligned slab of 2*half_width slices around the resection plane.
struct SlabSpec {
    int axis = 2;
    int index = 0;       // slab center slice
    int half_width = 6;  // 12-slice slab

    static SlabSpec centered(const GridShape& s, int axis = 2, int half_width = 6) {
        SlabSpec sl;
        sl.axis = axis;
        sl.half_width = half_width;
        sl.index = (axis == 0 ? s.nx : axis == 1 ? s.ny : s.nz) / 2;
        return sl;
    }
    void validate(const GridShape& s) const {
        const int n = axis == 0 ? s.nx : axis == 1 ? s.ny : s.nz;
        if (index - half_width < 0 || index + half_width > n)
            throw std::invalid_argument("SlabSpec: slab does not fit the grid");
    }
};

namespace detail {

struct Region {
    int lo[3] = {0, 0, 0};
    int hi[3] = {0, 0, 0};

    static Region full(const GridShape& s) {
        Region r;
        r.hi[0] = s.nx;
        r.hi[1] = s.ny;
        r.hi[2] = s.nz;
        return r;
    }
    static Region slab(const GridShape& s, const SlabSpec& sl) {
        sl.validate(s);
        Region r = full(s);
        r.lo[sl.axis] = sl.index - sl.half_width;
        r.hi[sl.axis] = sl.index + sl.half_width;
        return r;
    }
    template <typename F>
    void for_each(const GridShape& s, F&& f) const {
        for (int i = lo[0]; i < hi[0]; ++i)
            for (int j = lo[1]; j < hi[1]; ++j)
                for (int k = lo[2]; k < hi[2]; ++k) f(s.index(i, j, k));
    }
};

}  // namespace detail

/// Dice of thresholded bone masks (HU > tau) over a region, in percent. Two
/// empty masks agree perfectly: 100 with the flag set so the case stays
/// auditable.
inline double dice_bone(const ScalarVolume& pred, const ScalarVolume& truth, double tau,
                        const detail::Region& region, bool* both_empty_flag = nullptr) {
    if (pred.shape != truth.shape) throw std::invalid_argument("dice_bone: shape mismatch");
    size_t a = 0, b = 0, inter = 0;
    region.for_each(pred.shape, [&](size_t p) {
        const bool pa = pred.data[p] > tau, pb = truth.data[p] > tau;
        a += pa;
        b += pb;
        inter += pa && pb;
    });
    if (both_empty_flag) *both_empty_flag = (a + b == 0);
    if (a + b == 0) return 100.0;
    return 200.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

/// Mean absolute error in HU over a region; bone_only restricts to voxels
/// where the truth exceeds tau. An empty bone set reports NaN with the
/// missing flag set.
inline double mae(const ScalarVolume& pred, const ScalarVolume& truth, const detail::Region& region,
                  bool bone_only, double tau = kBoneThresholdHu, bool* missing_flag = nullptr) {
    if (pred.shape != truth.shape) throw std::invalid_argument("mae: shape mismatch");
    double acc = 0.0;
    size_t n = 0;
    region.for_each(pred.shape, [&](size_t p) {
        if (bone_only && !(truth.data[p] > tau)) return;
        acc += std::fabs(pred.data[p] - truth.data[p]);
        ++n;
    });
    if (missing_flag) *missing_flag = (n == 0);
    if (n == 0) return std::nan("");
    return acc / static_cast<double>(n);
}

namespace detail {

// Gaussian window taps, size 7, sigma 1.5, normalized.
inline const std::vector<double>& ssim_window() {
    static const std::vector<double> w = [] {
        std::vector<double> g(7);
        double sum = 0.0;
        for (int o = -3; o <= 3; ++o) {
            g[o + 3] = std::exp(-(o * o) / (2.0 * 1.5 * 1.5));
            sum += g[o + 3];
        }
        for (double& x : g) x /= sum;
        return g;
    }();
    return w;
}

struct Vol3 {
    int nx = 0, ny = 0, nz = 0;
    std::vector<double> v;
    Vol3() = default;
    Vol3(int x, int y, int z) : nx(x), ny(y), nz(z), v(static_cast<size_t>(x) * y * z, 0.0) {}
    size_t idx(int i, int j, int k) const { return (static_cast<size_t>(i) * ny + j) * nz + k; }
};

// Separable Gaussian filtering with index clamping at the faces.
inline Vol3 gauss_filter(const Vol3& in) {
    const auto& g = ssim_window();
    Vol3 a(in.nx, in.ny, in.nz), b(in.nx, in.ny, in.nz), c(in.nx, in.ny, in.nz);
    for (int i = 0; i < in.nx; ++i)
        for (int j = 0; j < in.ny; ++j)
            for (int k = 0; k < in.nz; ++k) {
                double acc = 0.0;
                for (int o = -3; o <= 3; ++o)
                    acc += g[o + 3] * in.v[in.idx(std::clamp(i + o, 0, in.nx - 1), j, k)];
                a.v[a.idx(i, j, k)] = acc;
            }
    for (int i = 0; i < in.nx; ++i)
        for (int j = 0; j < in.ny; ++j)
            for (int k = 0; k < in.nz; ++k) {
                double acc = 0.0;
                for (int o = -3; o <= 3; ++o)
                    acc += g[o + 3] * a.v[a.idx(i, std::clamp(j + o, 0, in.ny - 1), k)];
                b.v[b.idx(i, j, k)] = acc;
            }
    for (int i = 0; i < in.nx; ++i)
        for (int j = 0; j < in.ny; ++j)
            for (int k = 0; k < in.nz; ++k) {
                double acc = 0.0;
                for (int o = -3; o <= 3; ++o)
                    acc += g[o + 3] * b.v[b.idx(i, j, std::clamp(k + o, 0, in.nz - 1))];
                c.v[c.idx(i, j, k)] = acc;
            }
    return c;
}

inline Vol3 avg_pool2(const Vol3& in) {
    Vol3 out(in.nx / 2, in.ny / 2, in.nz / 2);
    for (int i = 0; i < out.nx; ++i)
        for (int j = 0; j < out.ny; ++j)
            for (int k = 0; k < out.nz; ++k) {
                double acc = 0.0;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int c = 0; c < 2; ++c) acc += in.v[in.idx(2 * i + a, 2 * j + b, 2 * k + c)];
                out.v[out.idx(i, j, k)] = acc / 8.0;
            }
    return out;
}

// Per-scale mean contrast/structure term and mean luminance term.
inline void ssim_scale_means(const Vol3& x, const Vol3& y, double& mean_cs, double& mean_l) {
    const double C1 = (0.01 * kHuWindowWidth) * (0.01 * kHuWindowWidth);
    const double C2 = (0.03 * kHuWindowWidth) * (0.03 * kHuWindowWidth);
    Vol3 x2 = x, y2 = y, xy = x;
    for (size_t p = 0; p < x.v.size(); ++p) {
        x2.v[p] = x.v[p] * x.v[p];
        y2.v[p] = y.v[p] * y.v[p];
        xy.v[p] = x.v[p] * y.v[p];
    }
    Vol3 mx = gauss_filter(x), my = gauss_filter(y);
    Vol3 mx2 = gauss_filter(x2), my2 = gauss_filter(y2), mxy = gauss_filter(xy);
    double acc_cs = 0.0, acc_l = 0.0;
    for (size_t p = 0; p < x.v.size(); ++p) {
        const double sx = mx2.v[p] - mx.v[p] * mx.v[p];
        const double sy = my2.v[p] - my.v[p] * my.v[p];
        const double sxy = mxy.v[p] - mx.v[p] * my.v[p];
        acc_cs += (2.0 * sxy + C2) / (sx + sy + C2);
        acc_l += (2.0 * mx.v[p] * my.v[p] + C1) / (mx.v[p] * mx.v[p] + my.v[p] * my.v[p] + C1);
    }
    mean_cs = acc_cs / static_cast<double>(x.v.size());
    mean_l = acc_l / static_cast<double>(x.v.size());
}

inline int msssim_scales_for(int min_dim) {
    int scales = 0;
    for (int s = 1; s <= 3; ++s) {
        if (min_dim / (1 << (s - 1)) >= 3) scales = s;
    }
    return scales;
}

}  // namespace detail

/// 3D MS-SSIM in percent: Gaussian window 7 (sigma 1.5), dynamic range 1200 HU
/// (inputs shifted by the window minimum), up to 3 scales by 2x average
/// pooling, standard per-scale exponents renormalized to the scales used.
inline double msssim3d(const ScalarVolume& pred, const ScalarVolume& truth,
                       const detail::Region* region = nullptr) {
    if (pred.shape != truth.shape) throw std::invalid_argument("msssim3d: shape mismatch");
    detail::Region reg = region ? *region : detail::Region::full(pred.shape);
    const int dims[3] = {reg.hi[0] - reg.lo[0], reg.hi[1] - reg.lo[1], reg.hi[2] - reg.lo[2]};
    detail::Vol3 x(dims[0], dims[1], dims[2]), y(dims[0], dims[1], dims[2]);
    size_t q = 0;
    reg.for_each(pred.shape, [&](size_t p) {
        x.v[q] = pred.data[p] - kHuWindowLo;
        y.v[q] = truth.data[p] - kHuWindowLo;
        ++q;
    });
    const int min_dim = std::min({dims[0], dims[1], dims[2]});
    const int scales = detail::msssim_scales_for(min_dim);
    if (scales < 1) throw std::invalid_argument("msssim3d: volume too small for even one scale");

    // standard 5-scale exponents, first `scales` renormalized to sum 1
    const double std_w[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    std::vector<double> w(std_w, std_w + scales);
    double wsum = 0.0;
    for (double v : w) wsum += v;
    for (double& v : w) v /= wsum;

    double score = 1.0;
    for (int s = 0; s < scales; ++s) {
        double mcs = 0.0, ml = 0.0;
        detail::ssim_scale_means(x, y, mcs, ml);
        mcs = std::max(mcs, 0.0);
        ml = std::max(ml, 0.0);
        score *= std::pow(s + 1 == scales ? mcs * ml : mcs, w[s]);
        if (s + 1 < scales) {
            x = detail::avg_pool2(x);
            y = detail::avg_pool2(y);
        }
    }
    return 100.0 * score;
}

/// One region's worth of metric columns.
struct RegionMetrics {
    double dice_pct = 0.0;
    double msssim_pct = 0.0;
    double mae_all_hu = 0.0;
    double mae_bone_hu = 0.0;
    bool dice_both_empty = false;
    bool bone_missing = false;
};

/// The eight numbers of one evaluated pair: every metric over the mid slab
/// and over the full volume. Bone MAE masks on the ground-truth volume.
struct MetricRow {
    RegionMetrics mid;
    RegionMetrics full;
};

inline MetricRow evaluate_pair(const ScalarVolume& pred, const ScalarVolume& truth,
                               const SlabSpec& slab, double tau = kBoneThresholdHu) {
    if (pred.shape != truth.shape) throw std::invalid_argument("evaluate_pair: shape mismatch");
    MetricRow row;
    const detail::Region full = detail::Region::full(pred.shape);
    const detail::Region mid = detail::Region::slab(pred.shape, slab);
    row.full.dice_pct = dice_bone(pred, truth, tau, full, &row.full.dice_both_empty);
    row.mid.dice_pct = dice_bone(pred, truth, tau, mid, &row.mid.dice_both_empty);
    row.full.mae_all_hu = mae(pred, truth, full, false, tau);
    row.mid.mae_all_hu = mae(pred, truth, mid, false, tau);
    row.full.mae_bone_hu = mae(pred, truth, full, true, tau, &row.full.bone_missing);
    row.mid.mae_bone_hu = mae(pred, truth, mid, true, tau, &row.mid.bone_missing);
    row.full.msssim_pct = msssim3d(pred, truth);
    row.mid.msssim_pct = msssim3d(pred, truth, &mid);
    return row;
}

}  // namespace oflow
