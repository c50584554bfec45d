#pragma once

// Time-conditioned residual convolutional velocity network. Two resolution
// levels (full-res encoder block, one 2x-strided downsample, bottleneck block,
// nearest-neighbor upsample with skip concatenation), FiLM time modulation
// after the first convolution of each residual block, zero-initialized output
// projection so the initial ODE is the identity transport. Forward caches all
// intermediates; backward returns exact gradients for a flat parameter vector
// and, when asked, the gradient w.r.t. the state input channel.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "oflow/conv.hpp"
#include "oflow/rng.hpp"
#include "oflow/volume.hpp"

namespace oflow {

struct StudentConfig {
    int base_width = 8;       // channels at full resolution
    int levels = 2;           // full-res plus one 2x downsample
    int blocks_per_level = 1;
    int time_embed_dim = 16;
    uint64_t seed = 0;

    void validate() const {
        if (base_width < 4) throw std::invalid_argument("StudentConfig: base_width must be >= 4");
        if (levels != 2) throw std::invalid_argument("StudentConfig: only levels == 2 is supported");
        if (blocks_per_level != 1)
            throw std::invalid_argument("StudentConfig: only blocks_per_level == 1 is supported");
        if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
            throw std::invalid_argument("StudentConfig: time_embed_dim must be even and >= 2");
    }
};

struct ParamSlice {
    std::string name;
    size_t offset = 0;
    size_t count = 0;
};

struct ParamLayout {
    std::vector<ParamSlice> slices;
    size_t total = 0;

    void add(const std::string& name, size_t count) {
        slices.push_back({name, total, count});
        total += count;
    }
    const ParamSlice& find(const std::string& name) const {
        for (const auto& s : slices)
            if (s.name == name) return s;
        throw std::invalid_argument("ParamLayout: no slice named " + name);
    }
};

inline ParamLayout student_layout(const StudentConfig& cfg) {
    cfg.validate();
    const int w = cfg.base_width, w2 = 2 * cfg.base_width, e = cfg.time_embed_dim;
    ParamLayout L;
    L.add("stem.w", nn::conv3_weight_count(2, w));
    L.add("stem.b", w);
    L.add("enc.conv1.w", nn::conv3_weight_count(w, w));
    L.add("enc.conv1.b", w);
    L.add("enc.film.fc1.w", static_cast<size_t>(e) * e);
    L.add("enc.film.fc1.b", e);
    L.add("enc.film.fc2.w", static_cast<size_t>(2 * w) * e);
    L.add("enc.film.fc2.b", 2 * w);
    L.add("enc.conv2.w", nn::conv3_weight_count(w, w));
    L.add("enc.conv2.b", w);
    L.add("down.w", nn::conv3_weight_count(w, w2));
    L.add("down.b", w2);
    L.add("mid.conv1.w", nn::conv3_weight_count(w2, w2));
    L.add("mid.conv1.b", w2);
    L.add("mid.film.fc1.w", static_cast<size_t>(e) * e);
    L.add("mid.film.fc1.b", e);
    L.add("mid.film.fc2.w", static_cast<size_t>(2 * w2) * e);
    L.add("mid.film.fc2.b", 2 * w2);
    L.add("mid.conv2.w", nn::conv3_weight_count(w2, w2));
    L.add("mid.conv2.b", w2);
    L.add("up.w", nn::conv3_weight_count(w2, w));
    L.add("up.b", w);
    L.add("fuse.w", nn::conv3_weight_count(w2, w));
    L.add("fuse.b", w);
    L.add("out.w", w);
    L.add("out.b", 1);
    return L;
}

/// Sinusoidal time features: frequencies 2^0 .. 2^(d/2-1) of pi*t.
inline std::vector<double> time_embedding(double t, int dim) {
    std::vector<double> e(dim);
    double freq = 3.14159265358979323846;
    for (int i = 0; i < dim / 2; ++i) {
        e[2 * i] = std::sin(freq * t);
        e[2 * i + 1] = std::cos(freq * t);
        freq *= 2.0;
    }
    return e;
}

/// Fan-in-scaled uniform init for convolutions; FiLM output projections and
/// the final layer start at zero so modulation is the identity and the
/// network evaluates to the zero velocity.
inline std::vector<double> init_params(const StudentConfig& cfg, uint64_t seed) {
    const ParamLayout L = student_layout(cfg);
    std::vector<double> p(L.total, 0.0);
    Rng rng(seed);
    auto fill_uniform = [&](const std::string& name, int fan_in) {
        const ParamSlice& s = L.find(name);
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (size_t q = 0; q < s.count; ++q) p[s.offset + q] = rng.uniform(-bound, bound);
    };
    const int w = cfg.base_width, w2 = 2 * w, e = cfg.time_embed_dim;
    fill_uniform("stem.w", 2 * 27);
    fill_uniform("stem.b", 2 * 27);
    fill_uniform("enc.conv1.w", w * 27);
    fill_uniform("enc.conv1.b", w * 27);
    fill_uniform("enc.film.fc1.w", e);
    fill_uniform("enc.film.fc1.b", e);
    // enc.film.fc2.* stays zero: identity modulation at init
    fill_uniform("enc.conv2.w", w * 27);
    fill_uniform("enc.conv2.b", w * 27);
    fill_uniform("down.w", w * 27);
    fill_uniform("down.b", w * 27);
    fill_uniform("mid.conv1.w", w2 * 27);
    fill_uniform("mid.conv1.b", w2 * 27);
    fill_uniform("mid.film.fc1.w", e);
    fill_uniform("mid.film.fc1.b", e);
    // mid.film.fc2.* zero
    fill_uniform("mid.conv2.w", w2 * 27);
    fill_uniform("mid.conv2.b", w2 * 27);
    fill_uniform("up.w", w2 * 27);
    fill_uniform("up.b", w2 * 27);
    fill_uniform("fuse.w", w2 * 27);
    fill_uniform("fuse.b", w2 * 27);
    // out.w / out.b zero: v == 0 at init
    return p;
}

struct StudentNet {
    StudentConfig config;
    ParamLayout layout;
    std::vector<double> params;

    StudentNet() = default;
    explicit StudentNet(const StudentConfig& cfg)
        : config(cfg), layout(student_layout(cfg)), params(init_params(cfg, cfg.seed)) {}

    const double* slice(const std::string& name) const { return &params[layout.find(name).offset]; }
    size_t param_count() const { return layout.total; }
};

namespace detail {

struct FilmCache {
    std::vector<double> temb;     // [e]
    std::vector<double> f1;       // pre-activation [e]
    std::vector<double> f1s;      // silu(f1)
    std::vector<double> scale;    // additive scale offsets [c]
    std::vector<double> shift;    // [c]
};

inline FilmCache film_forward(const std::vector<double>& temb, const double* fc1w,
                              const double* fc1b, const double* fc2w, const double* fc2b, int e,
                              int c) {
    FilmCache f;
    f.temb = temb;
    f.f1.assign(e, 0.0);
    for (int r = 0; r < e; ++r) {
        double acc = fc1b[r];
        for (int q = 0; q < e; ++q) acc += fc1w[static_cast<size_t>(r) * e + q] * temb[q];
        f.f1[r] = acc;
    }
    f.f1s.resize(e);
    for (int r = 0; r < e; ++r) f.f1s[r] = nn::silu(f.f1[r]);
    f.scale.assign(c, 0.0);
    f.shift.assign(c, 0.0);
    for (int r = 0; r < 2 * c; ++r) {
        double acc = fc2b[r];
        for (int q = 0; q < e; ++q) acc += fc2w[static_cast<size_t>(r) * e + q] * f.f1s[q];
        (r < c ? f.scale[r] : f.shift[r - c]) = acc;
    }
    return f;
}

/// y[c] = x[c] * (1 + scale_c) + shift_c
inline void film_apply(const Tensor& x, Tensor& y, const FilmCache& f) {
    y = Tensor(x.C, x.nx, x.ny, x.nz);
    const size_t n = static_cast<size_t>(x.nx) * x.ny * x.nz;
    for (int c = 0; c < x.C; ++c) {
        const double s = 1.0 + f.scale[c], b = f.shift[c];
        const double* src = &x.v[c * n];
        double* dst = &y.v[c * n];
        for (size_t p = 0; p < n; ++p) dst[p] = src[p] * s + b;
    }
}

/// Backward of the whole FiLM path: input gradient plus fc1/fc2 parameter
/// gradients (t itself is not differentiated).
inline void film_backward(const Tensor& x, const Tensor& gy, const FilmCache& f, Tensor& gx,
                          const double* fc1w, const double* fc2w, double* gfc1w, double* gfc1b,
                          double* gfc2w, double* gfc2b, int e) {
    const int c = x.C;
    const size_t n = static_cast<size_t>(x.nx) * x.ny * x.nz;
    std::vector<double> gf2(2 * c, 0.0);
    for (int ch = 0; ch < c; ++ch) {
        const double s = 1.0 + f.scale[ch];
        const double* xs = &x.v[ch * n];
        const double* g = &gy.v[ch * n];
        double* gx_ = &gx.v[ch * n];
        double gs = 0.0, gb = 0.0;
        for (size_t p = 0; p < n; ++p) {
            gx_[p] += g[p] * s;
            gs += g[p] * xs[p];
            gb += g[p];
        }
        gf2[ch] = gs;
        gf2[c + ch] = gb;
    }
    std::vector<double> gf1s(e, 0.0);
    for (int r = 0; r < 2 * c; ++r) {
        gfc2b[r] += gf2[r];
        for (int q = 0; q < e; ++q) {
            gfc2w[static_cast<size_t>(r) * e + q] += gf2[r] * f.f1s[q];
            gf1s[q] += fc2w[static_cast<size_t>(r) * e + q] * gf2[r];
        }
    }
    std::vector<double> gf1(e);
    for (int q = 0; q < e; ++q) gf1[q] = gf1s[q] * nn::silu_deriv(f.f1[q]);
    for (int r = 0; r < e; ++r) {
        gfc1b[r] += gf1[r];
        for (int q = 0; q < e; ++q) gfc1w[static_cast<size_t>(r) * e + q] += gf1[r] * f.temb[q];
    }
}

}  // namespace detail

/// Everything backward needs; valid for exactly the (params, inputs, t) the
/// forward ran with.
struct ForwardCache {
    GridShape grid;
    double t = 0.0;
    Tensor x_in;    // 2 channels: x_t, x_d5
    Tensor e0;      // stem output
    Tensor eh1;     // enc conv1 pre-FiLM
    detail::FilmCache efilm;
    Tensor ehf;     // FiLM'd, pre-SiLU
    Tensor ehs;     // SiLU'd
    Tensor e1;      // block output (e0 + conv2(ehs))
    Tensor m0;      // down conv pre-SiLU
    Tensor m0s;
    Tensor mh1;
    detail::FilmCache mfilm;
    Tensor mhf;
    Tensor mhs;
    Tensor m1;
    Tensor u0;      // upsampled m1
    Tensor u1;      // up conv pre-SiLU
    Tensor u1s;
    Tensor cat;     // concat(u1s, e1)
    Tensor f0;      // fuse conv pre-SiLU
    Tensor f0s;
    bool valid = false;
};

inline ScalarVolume forward(const StudentNet& net, const ScalarVolume& x_t, double t,
                            const ScalarVolume& x_d5, ForwardCache* cache = nullptr) {
    if (x_t.shape != x_d5.shape) throw std::invalid_argument("student forward: shape mismatch");
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("student forward: t must be in [0,1]");
    const GridShape& g = x_t.shape;
    if (g.nx % 2 || g.ny % 2 || g.nz % 2)
        throw std::invalid_argument("student forward: grid must be even for the 2x downsample");
    const int w = net.config.base_width, w2 = 2 * w, e = net.config.time_embed_dim;

    ForwardCache local;
    ForwardCache& C = cache ? *cache : local;
    C = ForwardCache{};
    C.grid = g;
    C.t = t;

    C.x_in = Tensor(2, g.nx, g.ny, g.nz);
    std::copy(x_t.data.begin(), x_t.data.end(), C.x_in.v.begin());
    std::copy(x_d5.data.begin(), x_d5.data.end(), C.x_in.v.begin() + x_t.data.size());

    const auto temb = time_embedding(t, e);
    C.efilm = detail::film_forward(temb, net.slice("enc.film.fc1.w"), net.slice("enc.film.fc1.b"),
                                   net.slice("enc.film.fc2.w"), net.slice("enc.film.fc2.b"), e, w);
    C.mfilm = detail::film_forward(temb, net.slice("mid.film.fc1.w"), net.slice("mid.film.fc1.b"),
                                   net.slice("mid.film.fc2.w"), net.slice("mid.film.fc2.b"), e, w2);

    nn::conv3_forward(C.x_in, C.e0, net.slice("stem.w"), net.slice("stem.b"), w, 1);

    // encoder residual block
    nn::conv3_forward(C.e0, C.eh1, net.slice("enc.conv1.w"), net.slice("enc.conv1.b"), w, 1);
    detail::film_apply(C.eh1, C.ehf, C.efilm);
    nn::silu_forward(C.ehf, C.ehs);
    nn::conv3_forward(C.ehs, C.e1, net.slice("enc.conv2.w"), net.slice("enc.conv2.b"), w, 1);
    for (size_t p = 0; p < C.e1.v.size(); ++p) C.e1.v[p] += C.e0.v[p];

    // downsample + bottleneck block
    nn::conv3_forward(C.e1, C.m0, net.slice("down.w"), net.slice("down.b"), w2, 2);
    nn::silu_forward(C.m0, C.m0s);
    nn::conv3_forward(C.m0s, C.mh1, net.slice("mid.conv1.w"), net.slice("mid.conv1.b"), w2, 1);
    detail::film_apply(C.mh1, C.mhf, C.mfilm);
    nn::silu_forward(C.mhf, C.mhs);
    nn::conv3_forward(C.mhs, C.m1, net.slice("mid.conv2.w"), net.slice("mid.conv2.b"), w2, 1);
    for (size_t p = 0; p < C.m1.v.size(); ++p) C.m1.v[p] += C.m0s.v[p];

    // upsample, skip concat, fuse, project
    nn::upsample2_forward(C.m1, C.u0);
    nn::conv3_forward(C.u0, C.u1, net.slice("up.w"), net.slice("up.b"), w, 1);
    nn::silu_forward(C.u1, C.u1s);
    C.cat = Tensor(w2, g.nx, g.ny, g.nz);
    std::copy(C.u1s.v.begin(), C.u1s.v.end(), C.cat.v.begin());
    std::copy(C.e1.v.begin(), C.e1.v.end(), C.cat.v.begin() + C.u1s.v.size());
    nn::conv3_forward(C.cat, C.f0, net.slice("fuse.w"), net.slice("fuse.b"), w, 1);
    nn::silu_forward(C.f0, C.f0s);

    Tensor out;
    nn::conv1x1_forward(C.f0s, out, net.slice("out.w"), net.slice("out.b"), 1);
    C.valid = true;

    ScalarVolume result(g, 0.0, ScalarRole::velocity);
    std::copy(out.v.begin(), out.v.end(), result.data.begin());
    return result;
}

/// Exact gradient of any scalar loss whose output gradient is supplied.
/// Accumulates into grad (size = param count); when dx_t is non-null, also
/// accumulates dL/dx_t (the state input channel).
inline void backward(const StudentNet& net, const ForwardCache& C, const ScalarVolume& upstream,
                     std::vector<double>& grad, ScalarVolume* dx_t = nullptr) {
    if (!C.valid) throw std::invalid_argument("student backward: missing forward cache");
    if (upstream.shape != C.grid) throw std::invalid_argument("student backward: upstream shape mismatch");
    if (grad.size() != net.param_count()) throw std::invalid_argument("student backward: grad size mismatch");
    const int w = net.config.base_width, w2 = 2 * w, e = net.config.time_embed_dim;
    const GridShape& g = C.grid;
    auto G = [&](const std::string& name) { return &grad[net.layout.find(name).offset]; };

    Tensor gout(1, g.nx, g.ny, g.nz);
    std::copy(upstream.data.begin(), upstream.data.end(), gout.v.begin());

    // output projection
    Tensor gf0s(w, g.nx, g.ny, g.nz);
    nn::conv1x1_backward(gf0s, G("out.w"), G("out.b"), C.f0s, gout, net.slice("out.w"), 1);

    // fuse conv
    Tensor gf0(w, g.nx, g.ny, g.nz);
    gf0.zero();
    nn::silu_backward(C.f0, gf0s, gf0);
    Tensor gcat(w2, g.nx, g.ny, g.nz);
    nn::conv3_backward_input(gcat, gf0, net.slice("fuse.w"), w, 1);
    nn::conv3_backward_params(G("fuse.w"), G("fuse.b"), C.cat, gf0, 1);

    // split concat
    Tensor gu1s(w, g.nx, g.ny, g.nz), ge1(w, g.nx, g.ny, g.nz);
    std::copy(gcat.v.begin(), gcat.v.begin() + gu1s.v.size(), gu1s.v.begin());
    std::copy(gcat.v.begin() + gu1s.v.size(), gcat.v.end(), ge1.v.begin());

    // up conv and upsample
    Tensor gu1(w, g.nx, g.ny, g.nz);
    nn::silu_backward(C.u1, gu1s, gu1);
    Tensor gu0(w2, g.nx, g.ny, g.nz);
    nn::conv3_backward_input(gu0, gu1, net.slice("up.w"), w, 1);
    nn::conv3_backward_params(G("up.w"), G("up.b"), C.u0, gu1, 1);
    Tensor gm1(w2, C.m1.nx, C.m1.ny, C.m1.nz);
    nn::upsample2_backward(gm1, gu0);

    // bottleneck residual block
    Tensor gmhs(w2, C.m1.nx, C.m1.ny, C.m1.nz);
    nn::conv3_backward_input(gmhs, gm1, net.slice("mid.conv2.w"), w2, 1);
    nn::conv3_backward_params(G("mid.conv2.w"), G("mid.conv2.b"), C.mhs, gm1, 1);
    Tensor gmhf(w2, C.m1.nx, C.m1.ny, C.m1.nz);
    nn::silu_backward(C.mhf, gmhs, gmhf);
    Tensor gmh1(w2, C.m1.nx, C.m1.ny, C.m1.nz);
    detail::film_backward(C.mh1, gmhf, C.mfilm, gmh1, net.slice("mid.film.fc1.w"),
                          net.slice("mid.film.fc2.w"), G("mid.film.fc1.w"), G("mid.film.fc1.b"),
                          G("mid.film.fc2.w"), G("mid.film.fc2.b"), e);
    Tensor gm0s = gm1;  // residual skip
    nn::conv3_backward_input(gm0s, gmh1, net.slice("mid.conv1.w"), w2, 1);
    nn::conv3_backward_params(G("mid.conv1.w"), G("mid.conv1.b"), C.m0s, gmh1, 1);

    // downsample
    Tensor gm0(w2, C.m0.nx, C.m0.ny, C.m0.nz);
    nn::silu_backward(C.m0, gm0s, gm0);
    nn::conv3_backward_input(ge1, gm0, net.slice("down.w"), w2, 2);
    nn::conv3_backward_params(G("down.w"), G("down.b"), C.e1, gm0, 2);

    // encoder residual block
    Tensor gehs(w, g.nx, g.ny, g.nz);
    nn::conv3_backward_input(gehs, ge1, net.slice("enc.conv2.w"), w, 1);
    nn::conv3_backward_params(G("enc.conv2.w"), G("enc.conv2.b"), C.ehs, ge1, 1);
    Tensor gehf(w, g.nx, g.ny, g.nz);
    nn::silu_backward(C.ehf, gehs, gehf);
    Tensor geh1(w, g.nx, g.ny, g.nz);
    detail::film_backward(C.eh1, gehf, C.efilm, geh1, net.slice("enc.film.fc1.w"),
                          net.slice("enc.film.fc2.w"), G("enc.film.fc1.w"), G("enc.film.fc1.b"),
                          G("enc.film.fc2.w"), G("enc.film.fc2.b"), e);
    Tensor ge0 = ge1;  // residual skip
    nn::conv3_backward_input(ge0, geh1, net.slice("enc.conv1.w"), w, 1);
    nn::conv3_backward_params(G("enc.conv1.w"), G("enc.conv1.b"), C.e0, geh1, 1);

    // stem
    nn::conv3_backward_params(G("stem.w"), G("stem.b"), C.x_in, ge0, 1);
    if (dx_t) {
        if (dx_t->shape != C.grid) *dx_t = ScalarVolume(C.grid);
        Tensor gx(2, g.nx, g.ny, g.nz);
        nn::conv3_backward_input(gx, ge0, net.slice("stem.w"), w, 1);
        for (size_t p = 0; p < dx_t->data.size(); ++p) dx_t->data[p] += gx.v[p];
    }
}

}  // namespace oflow
