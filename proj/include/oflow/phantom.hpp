#pragma once

// Synthetic paired early/late ROI generator. Day-5: two textured bone
// segments (cortical shell, marrow core) separated by a soft-tissue gap at
// the central plane. Year-1: the Day-5 volume warped by a random smooth SVF
// concentrated at the interface, with bridging callus painted per outcome
// (union: full bridge; partial: half the cross-section; nonunion: none, plus
// slight gap widening folded into the SVF). Paired augmentation applies one
// geometric transform to both volumes and independent intensity perturbations.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "oflow/common.hpp"
#include "oflow/plane.hpp"
#include "oflow/rng.hpp"
#include "oflow/svf.hpp"
#include "oflow/volume.hpp"
#include "oflow/volume_io.hpp"

namespace oflow {

enum class Outcome { union_, partial, nonunion };

inline std::string to_string(Outcome o) {
    switch (o) {
        case Outcome::union_: return "union";
        case Outcome::partial: return "partial";
        default: return "nonunion";
    }
}
inline Outcome outcome_from(const std::string& s) {
    if (s == "union") return Outcome::union_;
    if (s == "partial") return Outcome::partial;
    if (s == "nonunion") return Outcome::nonunion;
    throw DataError("unknown outcome: " + s);
}

struct PhantomSpec {
    GridShape shape = GridShape(24, 0.5);
    Outcome outcome = Outcome::union_;
    double gap_mm = 2.0;
    double segment_radius_mm = 3.5;
    double cortical_hu = 900.0;   // sampled around [700, 1100]
    double marrow_hu = 250.0;     // sampled around [150, 350]
    double callus_hu = 600.0;     // sampled in [300, 900], below 1000
    double deform_svf_scale = 1.5;  // voxels, max displacement
    double deform_sigma_vox = 3.5;  // interface concentration of the SVF
    double texture_hu = 40.0;
    uint64_t texture_seed = 0;
    // restrict the pair to the truth-SVF warp alone: no callus, no end-plate
    // resorption; used by registration oracles that need pure deformation
    bool pure_warp = false;

    void validate() const {
        const double gap_vox = gap_mm / shape.spacing_mm;
        const double radius_vox = segment_radius_mm / shape.spacing_mm;
        if (gap_vox + 4.0 >= shape.nz) throw std::invalid_argument("PhantomSpec: gap does not fit the ROI");
        if (2.0 * radius_vox + 4.0 >= shape.nx)
            throw std::invalid_argument("PhantomSpec: segments do not fit the ROI");
        if (callus_hu >= 1000.0) throw std::invalid_argument("PhantomSpec: callus must stay below 1000 HU");
    }
};

struct AugmentSpec {
    bool mirror = false;
    double rot_deg[3] = {0.0, 0.0, 0.0};  // |.| <= 10
    int shift_vox[3] = {0, 0, 0};         // |.| <= 2
    double noise_hu[2] = {0.0, 0.0};      // per volume, sigma in [10, 25]
    double brightness_hu[2] = {0.0, 0.0};
    double contrast_frac[2] = {0.0, 0.0};
    double blur_sigma[2] = {0.0, 0.0};  // 0 or 0.8
    uint64_t seed = 0;

    static AugmentSpec sample(Rng& rng) {
        AugmentSpec a;
        a.mirror = rng.coin(0.5);
        for (int q = 0; q < 3; ++q) a.rot_deg[q] = rng.uniform(-10.0, 10.0);
        for (int q = 0; q < 3; ++q) a.shift_vox[q] = static_cast<int>(rng.uniform_int(-2, 2));
        for (int v = 0; v < 2; ++v) {
            a.noise_hu[v] = rng.uniform(10.0, 25.0);
            a.brightness_hu[v] = rng.uniform(-30.0, 30.0);
            a.contrast_frac[v] = rng.uniform(-0.03, 0.03);
            a.blur_sigma[v] = rng.coin(0.5) ? 0.8 : 0.0;
        }
        a.seed = rng.next_u64();
        return a;
    }
    bool is_identity_geometry() const {
        return !mirror && rot_deg[0] == 0.0 && rot_deg[1] == 0.0 && rot_deg[2] == 0.0 &&
               shift_vox[0] == 0 && shift_vox[1] == 0 && shift_vox[2] == 0;
    }
};

struct PairedSample {
    ScalarVolume x_d5;
    ScalarVolume x_y1;
    StationaryVelocityField truth_svf;  // empty shape when absent
    bool has_truth_svf = false;
    Outcome outcome = Outcome::union_;
    PlaneSpec plane;
    std::string phantom_id;
    int variant = 1;  // 1 = original
    bool augmented = false;
};

namespace detail {

// Low-frequency texture from a handful of random trig modes.
inline ScalarVolume texture_volume(const GridShape& s, double amp, Rng& rng) {
    ScalarVolume t(s, 0.0);
    const double w = 2.0 * 3.14159265358979323846 / s.nx;
    for (int m = 0; m < 3; ++m) {
        const double a = amp * rng.uniform(0.3, 1.0) / 3.0;
        const double f1 = rng.uniform(1.0, 3.0), f2 = rng.uniform(1.0, 3.0), f3 = rng.uniform(1.0, 3.0);
        const double p1 = rng.uniform(0.0, 6.28), p2 = rng.uniform(0.0, 6.28);
        for (int i = 0; i < s.nx; ++i)
            for (int j = 0; j < s.ny; ++j)
                for (int k = 0; k < s.nz; ++k)
                    t.at(i, j, k) += a * std::sin(w * f1 * i + p1) * std::cos(w * f2 * j + p2) *
                                     std::sin(w * f3 * k + p1);
    }
    return t;
}

// Smoothstep edge profile: 1 inside, 0 outside, ~1 voxel transition band.
inline double soft_edge(double signed_dist) {
    const double u = std::clamp(0.5 - signed_dist, 0.0, 1.0);
    return u * u * (3.0 - 2.0 * u);
}

// Random smooth SVF for the year-1 deformation: white-noise Gaussian bumps
// modulated by a Gaussian of plane distance, so remodeling concentrates at
// the graft interface; widen > 0 adds the nonunion gap-widening component.
inline StationaryVelocityField deformation_svf(const GridShape& s, double max_vox, double sigma_vox,
                                               double widen_vox, Rng& rng) {
    VectorField3 f(s, VectorRole::svf);
    const double cz = 0.5 * (s.nz - 1);
    const double bump_sigma = s.nx / 4.0;
    for (int b = 0; b < 4; ++b) {
        const double cx = rng.uniform(0.25, 0.75) * s.nx;
        const double cy = rng.uniform(0.25, 0.75) * s.ny;
        const double ck = rng.uniform(0.35, 0.65) * s.nz;
        const double ax = rng.uniform(-1.0, 1.0), ay = rng.uniform(-1.0, 1.0), az = rng.uniform(-1.0, 1.0);
        for (int i = 0; i < s.nx; ++i)
            for (int j = 0; j < s.ny; ++j)
                for (int k = 0; k < s.nz; ++k) {
                    const double r2 = (i - cx) * (i - cx) + (j - cy) * (j - cy) + (k - ck) * (k - ck);
                    const double g = std::exp(-r2 / (2.0 * bump_sigma * bump_sigma));
                    double* v = f.vec(i, j, k);
                    v[0] += ax * g;
                    v[1] += ay * g;
                    v[2] += az * g;
                }
    }
    StationaryVelocityField svf(std::move(f));
    for (int i = 0; i < s.nx; ++i)
        for (int j = 0; j < s.ny; ++j)
            for (int k = 0; k < s.nz; ++k) {
                const double m = std::exp(-(k - cz) * (k - cz) / (2.0 * sigma_vox * sigma_vox));
                double* v = svf.v.vec(i, j, k);
                v[0] *= m;
                v[1] *= m;
                v[2] *= m;
            }
    const double mx = svf.max_displacement();
    if (mx > 0.0)
        for (double& x : svf.v.data) x *= max_vox / mx;
    if (widen_vox > 0.0) {
        // pull convention: sampling from nearer the plane moves content away
        for (int i = 0; i < s.nx; ++i)
            for (int j = 0; j < s.ny; ++j)
                for (int k = 0; k < s.nz; ++k) {
                    const double d = k - cz;
                    const double prof = std::tanh(d / 2.0) * std::exp(-d * d / (2.0 * 16.0));
                    svf.v.vec(i, j, k)[2] += -widen_vox * prof;
                }
    }
    return svf;
}

}  // namespace detail

/// Generate one original paired sample from a spec.
inline PairedSample generate_pair(const PhantomSpec& spec, Rng& rng) {
    spec.validate();
    const GridShape& s = spec.shape;
    const double cx = 0.5 * (s.nx - 1), cy = 0.5 * (s.ny - 1), cz = 0.5 * (s.nz - 1);
    const double gap_half = 0.5 * spec.gap_mm / s.spacing_mm;
    const double radius = spec.segment_radius_mm / s.spacing_mm;
    const double shell = 1.6;  // cortical thickness, voxels

    Rng trng = rng.fork(spec.texture_seed + 101);
    ScalarVolume tex = detail::texture_volume(s, spec.texture_hu, trng);
    const double jx = rng.uniform(-1.0, 1.0), jy = rng.uniform(-1.0, 1.0);  // axis jitter

    PairedSample pair;
    pair.outcome = spec.outcome;
    pair.plane = PlaneSpec::centered(s, 2);
    pair.x_d5 = ScalarVolume(s, 0.0);
    for (int i = 0; i < s.nx; ++i)
        for (int j = 0; j < s.ny; ++j)
            for (int k = 0; k < s.nz; ++k) {
                const double axis_x = cx + jx, axis_y = cy + jy;
                const double r = std::sqrt((i - axis_x) * (i - axis_x) + (j - axis_y) * (j - axis_y));
                // segment presence: 1 outside the gap slab, soft ~1-voxel band
                const double seg = detail::soft_edge(gap_half - std::fabs(k - cz));
                const double radial = detail::soft_edge(r - radius);
                const double marrow = detail::soft_edge(r - (radius - shell));
                const double bone_frac = radial * seg;
                const double hu = 25.0 + bone_frac * ((1.0 - marrow) * (spec.cortical_hu - 25.0) +
                                                      marrow * (spec.marrow_hu - 25.0));
                pair.x_d5.at(i, j, k) = hu + tex.at(i, j, k) * (hu > 150.0 ? 1.0 : 0.4);
            }
    pair.x_d5.window_hu();

    // year-1 deformation (nonunion widening folds into the truth SVF)
    const double widen = spec.outcome == Outcome::nonunion ? rng.uniform(0.6, 1.2) : 0.0;
    Rng drng = rng.fork(7);
    pair.truth_svf = detail::deformation_svf(s, spec.deform_svf_scale, spec.deform_sigma_vox, widen, drng);
    pair.has_truth_svf = true;
    pair.x_y1 = warp(pair.x_d5, exp_svf(pair.truth_svf, 1.0, squaring_steps_for(pair.truth_svf)));

    // atrophic end-plate resorption for nonunion: bone near the interface
    // loses density in a way no deformation can explain
    if (spec.outcome == Outcome::nonunion && !spec.pure_warp) {
        Rng rrng = rng.fork(17);
        const double rho0 = rrng.uniform(0.65, 0.9);
        const double band = 3.5;
        for (int i = 0; i < s.nx; ++i)
            for (int j = 0; j < s.ny; ++j)
                for (int k = 0; k < s.nz; ++k) {
                    const double dist = std::fabs(k - cz) - gap_half;
                    if (dist < -1.0 || dist > band) continue;
                    const double prof = std::cos(0.5 * 3.14159265358979 * std::clamp(dist / band, 0.0, 1.0));
                    double& y = pair.x_y1.at(i, j, k);
                    const double bone_gate = std::clamp((y - 200.0) / 200.0, 0.0, 1.0);
                    y = y - rho0 * prof * bone_gate * (y - 120.0);
                }
    }

    // bridging callus painted after the warp: new bone the deformation cannot
    // explain
    if (spec.outcome != Outcome::nonunion && !spec.pure_warp) {
        Rng crng = rng.fork(13);
        const double bridge_r = radius - 0.5;
        const double sector = crng.uniform(0.0, 6.28);  // partial-union bridge orientation
        ScalarVolume ctex = detail::texture_volume(s, 60.0, crng);
        for (int i = 0; i < s.nx; ++i)
            for (int j = 0; j < s.ny; ++j)
                for (int k = 0; k < s.nz; ++k) {
                    const double r = std::sqrt((i - cx - jx) * (i - cx - jx) + (j - cy - jy) * (j - cy - jy));
                    const double dz = std::fabs(k - cz) - (gap_half + 1.5);
                    if (dz > 0.0) continue;  // callus spans the gap region only
                    double frac = detail::soft_edge(r - bridge_r);
                    if (spec.outcome == Outcome::partial) {
                        // keep at most half the interface cross-section
                        const double ang = std::atan2(j - cy - jy, i - cx - jx);
                        double rel = std::fmod(ang - sector + 9.42477796076938, 6.28318530717959) - 3.14159265358979;
                        frac *= detail::soft_edge(std::fabs(rel) - 1.45);
                    }
                    if (frac <= 0.0) continue;
                    const double callus = spec.callus_hu + ctex.at(i, j, k);
                    double& y = pair.x_y1.at(i, j, k);
                    y = std::max(y, 25.0 + frac * (callus - 25.0));
                }
    }
    pair.x_y1.window_hu();
    return pair;
}

namespace detail {

// Combined geometric transform: mirror in x, rotation about the grid center
// (XYZ Euler order), then integer shift; output voxel w samples the input at
// T^-1(w) with trilinear interpolation and boundary clamping.
struct GeomTransform {
    double R[3][3];   // forward rotation
    double Mx = 1.0;  // -1 when mirrored
    double shift[3];
    double center[3];

    static GeomTransform from(const AugmentSpec& a, const GridShape& s) {
        GeomTransform t;
        const double d2r = 3.14159265358979323846 / 180.0;
        const double ax = a.rot_deg[0] * d2r, ay = a.rot_deg[1] * d2r, az = a.rot_deg[2] * d2r;
        const double cxr = std::cos(ax), sxr = std::sin(ax);
        const double cyr = std::cos(ay), syr = std::sin(ay);
        const double czr = std::cos(az), szr = std::sin(az);
        // R = Rz * Ry * Rx
        const double Rx[3][3] = {{1, 0, 0}, {0, cxr, -sxr}, {0, sxr, cxr}};
        const double Ry[3][3] = {{cyr, 0, syr}, {0, 1, 0}, {-syr, 0, cyr}};
        const double Rz[3][3] = {{czr, -szr, 0}, {szr, czr, 0}, {0, 0, 1}};
        double tmp[3][3] = {};
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                for (int q = 0; q < 3; ++q) tmp[r][c] += Ry[r][q] * Rx[q][c];
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                t.R[r][c] = 0.0;
                for (int q = 0; q < 3; ++q) t.R[r][c] += Rz[r][q] * tmp[q][c];
            }
        t.Mx = a.mirror ? -1.0 : 1.0;
        for (int q = 0; q < 3; ++q) t.shift[q] = a.shift_vox[q];
        t.center[0] = 0.5 * (s.nx - 1);
        t.center[1] = 0.5 * (s.ny - 1);
        t.center[2] = 0.5 * (s.nz - 1);
        return t;
    }

    // inverse map: x = M * R^T * (y - c - shift) + c
    void inverse(const double y[3], double out[3]) const {
        double d[3] = {y[0] - center[0] - shift[0], y[1] - center[1] - shift[1],
                       y[2] - center[2] - shift[2]};
        double r[3];
        for (int q = 0; q < 3; ++q) r[q] = R[0][q] * d[0] + R[1][q] * d[1] + R[2][q] * d[2];
        out[0] = Mx * r[0] + center[0];
        out[1] = r[1] + center[1];
        out[2] = r[2] + center[2];
    }
    // forward direction map for the plane normal
    void rotate_forward(const double n[3], double out[3]) const {
        const double m[3] = {Mx * n[0], n[1], n[2]};
        for (int q = 0; q < 3; ++q) out[q] = R[q][0] * m[0] + R[q][1] * m[1] + R[q][2] * m[2];
    }
};

inline ScalarVolume resample(const ScalarVolume& vol, const GeomTransform& t) {
    const GridShape& s = vol.shape;
    ScalarVolume out(s, 0.0, vol.role);
    for (int i = 0; i < s.nx; ++i)
        for (int j = 0; j < s.ny; ++j)
            for (int k = 0; k < s.nz; ++k) {
                const double y[3] = {static_cast<double>(i), static_cast<double>(j),
                                     static_cast<double>(k)};
                double p[3];
                t.inverse(y, p);
                out.at(i, j, k) = sample_trilinear(vol, p[0], p[1], p[2]);
            }
    return out;
}

inline ScalarVolume gaussian_blur(const ScalarVolume& vol, double sigma) {
    if (sigma <= 0.0) return vol;
    const int radius = 2;
    std::vector<double> g(2 * radius + 1);
    double sum = 0.0;
    for (int o = -radius; o <= radius; ++o) {
        g[o + radius] = std::exp(-o * o / (2.0 * sigma * sigma));
        sum += g[o + radius];
    }
    for (double& x : g) x /= sum;
    const GridShape& s = vol.shape;
    ScalarVolume a = vol, b = vol;
    for (int axis = 0; axis < 3; ++axis) {
        const ScalarVolume& src = axis % 2 == 0 ? a : b;
        ScalarVolume& dst = axis % 2 == 0 ? b : a;
        for (int i = 0; i < s.nx; ++i)
            for (int j = 0; j < s.ny; ++j)
                for (int k = 0; k < s.nz; ++k) {
                    double acc = 0.0;
                    for (int o = -radius; o <= radius; ++o) {
                        int ii = i, jj = j, kk = k;
                        if (axis == 0) ii = std::clamp(i + o, 0, s.nx - 1);
                        else if (axis == 1) jj = std::clamp(j + o, 0, s.ny - 1);
                        else kk = std::clamp(k + o, 0, s.nz - 1);
                        acc += g[o + radius] * src.at(ii, jj, kk);
                    }
                    dst.at(i, j, k) = acc;
                }
    }
    return b;  // three passes end in b
}

inline void intensity_augment(ScalarVolume& vol, double noise_sigma, double brightness,
                              double contrast, double blur_sigma, Rng& rng) {
    if (blur_sigma > 0.0) vol = gaussian_blur(vol, blur_sigma);
    const bool affine = contrast != 0.0 || brightness != 0.0;
    if (!affine && noise_sigma <= 0.0 && blur_sigma <= 0.0) return;  // exact no-op
    double mean = 0.0;
    for (double x : vol.data) mean += x;
    mean /= static_cast<double>(vol.data.size());
    for (double& x : vol.data) {
        if (affine) x = mean + (1.0 + contrast) * (x - mean) + brightness;
        if (noise_sigma > 0.0) x += rng.normal(0.0, noise_sigma);
    }
    vol.window_hu();
}

}  // namespace detail

/// Apply one paired augmentation: shared geometric transform, independent
/// intensity perturbations, plane spec transformed consistently, truth SVF
/// dropped.
inline PairedSample augment_pair(const PairedSample& pair, const AugmentSpec& spec) {
    if (pair.augmented) throw std::invalid_argument("augment_pair: pair is already augmented");
    PairedSample out;
    out.outcome = pair.outcome;
    out.phantom_id = pair.phantom_id;
    out.augmented = true;
    out.has_truth_svf = false;

    const detail::GeomTransform t = detail::GeomTransform::from(spec, pair.x_d5.shape);
    if (spec.is_identity_geometry()) {
        out.x_d5 = pair.x_d5;
        out.x_y1 = pair.x_y1;
        out.plane = pair.plane;
    } else {
        out.x_d5 = detail::resample(pair.x_d5, t);
        out.x_y1 = detail::resample(pair.x_y1, t);
        out.plane = pair.plane;
        out.plane.axis_aligned = false;
        double n2[3];
        t.rotate_forward(pair.plane.normal, n2);
        for (int q = 0; q < 3; ++q) {
            out.plane.normal[q] = n2[q];
            out.plane.point[q] = pair.plane.point[q] + spec.shift_vox[q];
        }
    }
    Rng rng(spec.seed);
    detail::intensity_augment(out.x_d5, spec.noise_hu[0], spec.brightness_hu[0], spec.contrast_frac[0],
                              spec.blur_sigma[0], rng);
    detail::intensity_augment(out.x_y1, spec.noise_hu[1], spec.brightness_hu[1], spec.contrast_frac[1],
                              spec.blur_sigma[1], rng);
    return out;
}

/// Corpus manifest entry for one phantom.
struct ManifestPhantom {
    std::string id;
    Outcome outcome = Outcome::union_;
    std::string split;  // train | val | test
    std::vector<std::string> variants;  // relative file stems, variant 1 first
};

struct CorpusManifest {
    std::vector<ManifestPhantom> phantoms;
    uint64_t seed = 0;
    int shape_n = 24;
    double spacing_mm = 0.5;
    std::string generator_version = "1";
};

inline void save_manifest(const CorpusManifest& m, const std::string& path) {
    nlohmann::json j;
    j["seed"] = m.seed;
    j["shape_n"] = m.shape_n;
    j["spacing_mm"] = m.spacing_mm;
    j["generator_version"] = m.generator_version;
    j["phantoms"] = nlohmann::json::array();
    for (const auto& p : m.phantoms) {
        j["phantoms"].push_back({{"id", p.id},
                                 {"outcome", to_string(p.outcome)},
                                 {"split", p.split},
                                 {"variants", p.variants}});
    }
    std::ofstream out(path);
    if (!out) throw IoError("manifest: cannot write " + path);
    out << j.dump(2) << '\n';
}

inline CorpusManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("manifest: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw IoError("manifest: malformed JSON in " + path);
    CorpusManifest m;
    m.seed = j.value("seed", 0ull);
    m.shape_n = j.value("shape_n", 24);
    m.spacing_mm = j.value("spacing_mm", 0.5);
    m.generator_version = j.value("generator_version", "1");
    for (const auto& p : j.at("phantoms")) {
        ManifestPhantom mp;
        mp.id = p.at("id").get<std::string>();
        mp.outcome = outcome_from(p.at("outcome").get<std::string>());
        mp.split = p.at("split").get<std::string>();
        for (const auto& v : p.at("variants")) mp.variants.push_back(v.get<std::string>());
        m.phantoms.push_back(std::move(mp));
    }
    return m;
}

struct CorpusOptions {
    int n_base = 8;
    double mix[3] = {0.6, 0.2, 0.2};  // union, partial, nonunion
    int variants_per_pair = 41;       // original counts as variant 1
    int shape_n = 24;
    double spacing_mm = 0.5;
    double train_frac = 0.70;
    double val_frac = 0.15;
    uint64_t seed = 1;
};

/// Build a corpus on disk: n_base originals, variants_per_pair - 1
/// augmentations each, a phantom-level train/val/test split, and a manifest.
/// Fully deterministic in the seed.
inline CorpusManifest build_corpus(const CorpusOptions& opt, const std::string& out_dir) {
    if (opt.n_base < 4) throw std::invalid_argument("build_corpus: n_base must be >= 4");
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw IoError("build_corpus: cannot create " + out_dir);

    Rng master(opt.seed);

    // outcome labels by largest remainder, then shuffled
    std::vector<Outcome> labels;
    int counts[3] = {0, 0, 0};
    double frac[3];
    int assigned = 0;
    for (int c = 0; c < 3; ++c) {
        counts[c] = static_cast<int>(opt.mix[c] * opt.n_base);
        frac[c] = opt.mix[c] * opt.n_base - counts[c];
        assigned += counts[c];
    }
    while (assigned < opt.n_base) {
        int best = 0;
        for (int c = 1; c < 3; ++c)
            if (frac[c] > frac[best]) best = c;
        counts[best] += 1;
        frac[best] = -1.0;
        ++assigned;
    }
    for (int c = 0; c < 3; ++c)
        for (int q = 0; q < counts[c]; ++q)
            labels.push_back(c == 0 ? Outcome::union_ : c == 1 ? Outcome::partial : Outcome::nonunion);
    Rng label_rng = master.fork(1);
    shuffle_in_place(labels, label_rng);

    // phantom-level split
    std::vector<std::string> split(static_cast<size_t>(opt.n_base));
    {
        std::vector<size_t> order(static_cast<size_t>(opt.n_base));
        for (size_t q = 0; q < order.size(); ++q) order[q] = q;
        Rng split_rng = master.fork(2);
        shuffle_in_place(order, split_rng);
        const int n_train = std::max(1, static_cast<int>(opt.train_frac * opt.n_base));
        const int n_val = std::max(1, static_cast<int>(opt.val_frac * opt.n_base));
        for (int q = 0; q < opt.n_base; ++q) {
            if (q < n_train) split[order[static_cast<size_t>(q)]] = "train";
            else if (q < n_train + n_val) split[order[static_cast<size_t>(q)]] = "val";
            else split[order[static_cast<size_t>(q)]] = "test";
        }
    }

    CorpusManifest manifest;
    manifest.seed = opt.seed;
    manifest.shape_n = opt.shape_n;
    manifest.spacing_mm = opt.spacing_mm;
    manifest.phantoms.resize(static_cast<size_t>(opt.n_base));

#pragma omp parallel for schedule(dynamic)
    for (int p = 0; p < opt.n_base; ++p) {
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "p%03d", p);
        const std::string id = idbuf;
        const fs::path pdir = fs::path(out_dir) / id;
        fs::create_directories(pdir);

        Rng prng = master.fork(1000 + static_cast<uint64_t>(p));
        PhantomSpec spec;
        spec.shape = GridShape(opt.shape_n, opt.spacing_mm);
        spec.outcome = labels[static_cast<size_t>(p)];
        spec.gap_mm = prng.uniform(1.5, 3.0);
        spec.segment_radius_mm = prng.uniform(3.0, 4.2);
        spec.cortical_hu = prng.uniform(700.0, 1050.0);
        spec.marrow_hu = prng.uniform(150.0, 350.0);
        spec.callus_hu = prng.uniform(350.0, 850.0);
        spec.deform_svf_scale = prng.uniform(1.0, 1.8);
        spec.texture_seed = prng.next_u64();

        PairedSample original = generate_pair(spec, prng);
        original.phantom_id = id;

        ManifestPhantom& mp = manifest.phantoms[static_cast<size_t>(p)];
        mp.id = id;
        mp.outcome = spec.outcome;
        mp.split = split[static_cast<size_t>(p)];

        auto stem = [&](int variant) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "v%02d", variant);
            return id + "/" + buf;
        };
        write_vol((pdir / "v01_d5.vol").string(), original.x_d5);
        write_vol((pdir / "v01_y1.vol").string(), original.x_y1);
        write_vol((pdir / "truth_svf.vol").string(), original.truth_svf.v);
        mp.variants.push_back(stem(1));

        Rng arng = master.fork(50000 + static_cast<uint64_t>(p));
        for (int v = 2; v <= opt.variants_per_pair; ++v) {
            AugmentSpec aug = AugmentSpec::sample(arng);
            PairedSample av = augment_pair(original, aug);
            char buf[16];
            std::snprintf(buf, sizeof(buf), "v%02d", v);
            write_vol((pdir / (std::string(buf) + "_d5.vol")).string(), av.x_d5);
            write_vol((pdir / (std::string(buf) + "_y1.vol")).string(), av.x_y1);
            // plane sidecar for the augmented geometry
            nlohmann::json pj = {{"point", {av.plane.point[0], av.plane.point[1], av.plane.point[2]}},
                                 {"normal", {av.plane.normal[0], av.plane.normal[1], av.plane.normal[2]}},
                                 {"axis_aligned", av.plane.axis_aligned}};
            std::ofstream pout(pdir / (std::string(buf) + "_plane.json"));
            pout << pj.dump() << '\n';
            mp.variants.push_back(stem(v));
        }
    }

    save_manifest(manifest, (fs::path(out_dir) / "manifest.json").string());
    return manifest;
}

/// Load one variant pair from a corpus directory.
inline PairedSample load_pair(const std::string& corpus_dir, const ManifestPhantom& mp, int variant_idx) {
    namespace fs = std::filesystem;
    PairedSample pair;
    const std::string stem = mp.variants.at(static_cast<size_t>(variant_idx));
    pair.x_d5 = read_vol_scalar((fs::path(corpus_dir) / (stem + "_d5.vol")).string());
    pair.x_y1 = read_vol_scalar((fs::path(corpus_dir) / (stem + "_y1.vol")).string());
    pair.outcome = mp.outcome;
    pair.phantom_id = mp.id;
    pair.variant = variant_idx + 1;
    pair.augmented = variant_idx > 0;
    pair.plane = PlaneSpec::centered(pair.x_d5.shape, 2);
    const fs::path plane_path = fs::path(corpus_dir) / (stem + "_plane.json");
    if (std::ifstream pin(plane_path); pin) {
        nlohmann::json pj = nlohmann::json::parse(pin, nullptr, false);
        if (!pj.is_discarded()) {
            for (int q = 0; q < 3; ++q) {
                pair.plane.point[q] = pj.at("point")[static_cast<size_t>(q)].get<double>();
                pair.plane.normal[q] = pj.at("normal")[static_cast<size_t>(q)].get<double>();
            }
            pair.plane.axis_aligned = pj.value("axis_aligned", false);
        }
    }
    const fs::path svf_path = fs::path(corpus_dir) / mp.id / "truth_svf.vol";
    if (variant_idx == 0 && fs::exists(svf_path)) {
        pair.truth_svf = StationaryVelocityField(read_vol_vector(svf_path.string()));
        pair.has_truth_svf = true;
    }
    return pair;
}

}  // namespace oflow
