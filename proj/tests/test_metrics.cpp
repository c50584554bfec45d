#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "oflow/metrics.hpp"
#include "oflow/rng.hpp"
#include "test_support.hpp"

using namespace oflow;

namespace {

ScalarVolume random_volume(const GridShape& s, Rng& rng, double lo = -100.0, double hi = 1100.0) {
    ScalarVolume v(s);
    for (double& x : v.data) x = rng.uniform(lo, hi);
    return v;
}

// ---- brute-force MS-SSIM oracle: direct nested loops, no separability, no
// shared helpers with the library implementation ----

struct RawVol {
    int n[3];
    std::vector<double> v;
    double at(int i, int j, int k) const {
        return v[(static_cast<size_t>(i) * n[1] + j) * n[2] + k];
    }
};

RawVol raw_from(const ScalarVolume& x) {
    RawVol r;
    r.n[0] = x.shape.nx;
    r.n[1] = x.shape.ny;
    r.n[2] = x.shape.nz;
    r.v.resize(x.data.size());
    for (size_t p = 0; p < x.data.size(); ++p) r.v[p] = x.data[p] + 100.0;
    return r;
}

RawVol pool2_raw(const RawVol& in) {
    RawVol out;
    out.n[0] = in.n[0] / 2;
    out.n[1] = in.n[1] / 2;
    out.n[2] = in.n[2] / 2;
    out.v.assign(static_cast<size_t>(out.n[0]) * out.n[1] * out.n[2], 0.0);
    size_t q = 0;
    for (int i = 0; i < out.n[0]; ++i)
        for (int j = 0; j < out.n[1]; ++j)
            for (int k = 0; k < out.n[2]; ++k) {
                double acc = 0.0;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int c = 0; c < 2; ++c) acc += in.at(2 * i + a, 2 * j + b, 2 * k + c);
                out.v[q++] = acc / 8.0;
            }
    return out;
}

void scale_means_raw(const RawVol& x, const RawVol& y, double& mean_cs, double& mean_l) {
    double g1[7];
    double gs = 0.0;
    for (int o = -3; o <= 3; ++o) {
        g1[o + 3] = std::exp(-(o * o) / (2.0 * 1.5 * 1.5));
        gs += g1[o + 3];
    }
    for (double& g : g1) g /= gs;
    const double C1 = 12.0 * 12.0, C2 = 36.0 * 36.0;  // (0.01*1200)^2, (0.03*1200)^2
    double acc_cs = 0.0, acc_l = 0.0;
    size_t count = 0;
    for (int i = 0; i < x.n[0]; ++i)
        for (int j = 0; j < x.n[1]; ++j)
            for (int k = 0; k < x.n[2]; ++k) {
                double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
                for (int a = -3; a <= 3; ++a)
                    for (int b = -3; b <= 3; ++b)
                        for (int c = -3; c <= 3; ++c) {
                            const double wgt = g1[a + 3] * g1[b + 3] * g1[c + 3];
                            const int ii = std::clamp(i + a, 0, x.n[0] - 1);
                            const int jj = std::clamp(j + b, 0, x.n[1] - 1);
                            const int kk = std::clamp(k + c, 0, x.n[2] - 1);
                            const double xv = x.at(ii, jj, kk), yv = y.at(ii, jj, kk);
                            mx += wgt * xv;
                            my += wgt * yv;
                            mxx += wgt * xv * xv;
                            myy += wgt * yv * yv;
                            mxy += wgt * xv * yv;
                        }
                const double sx = mxx - mx * mx, sy = myy - my * my, sxy = mxy - mx * my;
                acc_cs += (2.0 * sxy + C2) / (sx + sy + C2);
                acc_l += (2.0 * mx * my + C1) / (mx * mx + my * my + C1);
                ++count;
            }
    mean_cs = acc_cs / static_cast<double>(count);
    mean_l = acc_l / static_cast<double>(count);
}

double msssim_oracle(const ScalarVolume& pred, const ScalarVolume& truth) {
    RawVol x = raw_from(pred), y = raw_from(truth);
    const int min_dim = std::min({x.n[0], x.n[1], x.n[2]});
    int scales = 0;
    for (int s = 1; s <= 3; ++s)
        if (min_dim / (1 << (s - 1)) >= 3) scales = s;
    const double std_w[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    double wsum = 0.0;
    for (int s = 0; s < scales; ++s) wsum += std_w[s];
    double score = 1.0;
    for (int s = 0; s < scales; ++s) {
        double mcs, ml;
        scale_means_raw(x, y, mcs, ml);
        mcs = std::max(mcs, 0.0);
        ml = std::max(ml, 0.0);
        score *= std::pow(s + 1 == scales ? mcs * ml : mcs, std_w[s] / wsum);
        if (s + 1 < scales) {
            x = pool2_raw(x);
            y = pool2_raw(y);
        }
    }
    return 100.0 * score;
}

}  // namespace

TEST_CASE("dice", "[metrics]") {
    GridShape s(8);
    auto full = oflow::detail::Region::full(s);

    SECTION("identical nonempty masks give 100") {
        ScalarVolume v(s, 0.0);
        v.at(2, 2, 2) = 800.0;
        v.at(3, 3, 3) = 500.0;
        CHECK(dice_bone(v, v, 300.0, full) == Catch::Approx(100.0));
    }
    SECTION("disjoint masks give 0") {
        ScalarVolume a(s, 0.0), b(s, 0.0);
        a.at(1, 1, 1) = 900.0;
        b.at(5, 5, 5) = 900.0;
        CHECK(dice_bone(a, b, 300.0, full) == Catch::Approx(0.0));
    }
    SECTION("half-overlapping equal-size masks give 50") {
        ScalarVolume a(s, 0.0), b(s, 0.0);
        a.at(1, 1, 1) = 900.0;
        a.at(1, 1, 2) = 900.0;
        b.at(1, 1, 2) = 900.0;
        b.at(1, 1, 3) = 900.0;
        CHECK(dice_bone(a, b, 300.0, full) == Catch::Approx(50.0));
    }
    SECTION("both-empty masks give 100 with the flag") {
        ScalarVolume a(s, 0.0), b(s, 10.0);
        bool flag = false;
        CHECK(dice_bone(a, b, 300.0, full, &flag) == Catch::Approx(100.0));
        CHECK(flag);
    }
}

TEST_CASE("mae", "[metrics]") {
    GridShape s(8);
    auto full = oflow::detail::Region::full(s);
    Rng rng(3);
    ScalarVolume truth = random_volume(s, rng);

    SECTION("identical volumes give 0") {
        CHECK(mae(truth, truth, full, false) == Catch::Approx(0.0));
    }
    SECTION("uniform offset gives the offset") {
        ScalarVolume pred = truth;
        for (double& x : pred.data) x += 10.0;
        CHECK(mae(pred, truth, full, false) == Catch::Approx(10.0));
    }
    SECTION("checker +-10 gives 10") {
        ScalarVolume pred = truth;
        for (size_t p = 0; p < pred.data.size(); ++p) pred.data[p] += (p % 2) ? 10.0 : -10.0;
        CHECK(mae(pred, truth, full, false) == Catch::Approx(10.0));
    }
    SECTION("bone-only masks on the truth; empty set flags missing") {
        ScalarVolume lo(s, 50.0);
        bool missing = false;
        const double m = mae(lo, lo, full, true, 300.0, &missing);
        CHECK(missing);
        CHECK(std::isnan(m));
    }
}

TEST_CASE("msssim basics", "[metrics]") {
    GridShape s(24);
    Rng rng(5);

    SECTION("identical volumes give 100") {
        ScalarVolume v = random_volume(s, rng);
        CHECK(msssim3d(v, v) == Catch::Approx(100.0).margin(1e-9));
    }
    SECTION("constant offset lowers the score monotonically") {
        ScalarVolume v = random_volume(s, rng, 0.0, 600.0);
        ScalarVolume v1 = v, v2 = v;
        for (double& x : v1.data) x += 50.0;
        for (double& x : v2.data) x += 150.0;
        const double s0 = msssim3d(v, v);
        const double s1 = msssim3d(v1, v);
        const double s2 = msssim3d(v2, v);
        CHECK(s1 < s0);
        CHECK(s2 < s1);
    }
    SECTION("volume too small for one scale throws") {
        GridShape tiny(2);
        ScalarVolume v(tiny, 0.0);
        CHECK_THROWS_AS(msssim3d(v, v), std::invalid_argument);
    }
}

TEST_CASE("msssim agrees with the brute-force oracle", "[metrics]") {
    GridShape s(24);
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        ScalarVolume truth = random_volume(s, rng, 0.0, 900.0);
        ScalarVolume pred = truth;
        for (double& x : pred.data) x = clamp_hu(x + rng.uniform(-80.0, 80.0));
        const double lib = msssim3d(pred, truth);
        const double ref = msssim_oracle(pred, truth);
        CHECK(std::fabs(lib - ref) < 1e-6);
    }
}

TEST_CASE("evaluate pair", "[metrics]") {
    GridShape s(24);
    SlabSpec slab = SlabSpec::centered(s, 2);

    SECTION("perfect prediction is perfect everywhere") {
        Rng rng(7);
        ScalarVolume v = random_volume(s, rng);
        MetricRow row = evaluate_pair(v, v, slab);
        CHECK(row.mid.dice_pct == Catch::Approx(100.0));
        CHECK(row.full.dice_pct == Catch::Approx(100.0));
        CHECK(row.mid.msssim_pct == Catch::Approx(100.0).margin(1e-9));
        CHECK(row.full.msssim_pct == Catch::Approx(100.0).margin(1e-9));
        CHECK(row.mid.mae_all_hu == Catch::Approx(0.0));
        CHECK(row.full.mae_all_hu == Catch::Approx(0.0));
    }
    SECTION("metrics are invariant to mirroring both inputs") {
        Rng rng(9);
        ScalarVolume truth = random_volume(s, rng);
        ScalarVolume pred = random_volume(s, rng);
        auto mirror = [&](const ScalarVolume& x) {
            ScalarVolume m(x.shape);
            for (int i = 0; i < s.nx; ++i)
                for (int j = 0; j < s.ny; ++j)
                    for (int k = 0; k < s.nz; ++k) m.at(i, j, k) = x.at(s.nx - 1 - i, j, k);
            return m;
        };
        MetricRow a = evaluate_pair(pred, truth, slab);
        MetricRow b = evaluate_pair(mirror(pred), mirror(truth), slab);
        CHECK(a.full.dice_pct == Catch::Approx(b.full.dice_pct).margin(1e-9));
        CHECK(a.full.mae_all_hu == Catch::Approx(b.full.mae_all_hu).margin(1e-9));
        CHECK(a.full.mae_bone_hu == Catch::Approx(b.full.mae_bone_hu).margin(1e-9));
        CHECK(a.full.msssim_pct == Catch::Approx(b.full.msssim_pct).margin(1e-9));
        // the slab is mirror-symmetric about the center along z, unchanged by an x-flip
        CHECK(a.mid.mae_all_hu == Catch::Approx(b.mid.mae_all_hu).margin(1e-9));
    }
    SECTION("dice and MAE-all are symmetric in their arguments") {
        Rng rng(11);
        ScalarVolume a = random_volume(s, rng), b = random_volume(s, rng);
        auto full = oflow::detail::Region::full(s);
        CHECK(dice_bone(a, b, 300.0, full) == Catch::Approx(dice_bone(b, a, 300.0, full)));
        CHECK(mae(a, b, full, false) == Catch::Approx(mae(b, a, full, false)));
    }
    SECTION("slab that does not fit throws") {
        GridShape small(8);
        SlabSpec bad = SlabSpec::centered(small, 2);  // half-width 6 > 4
        ScalarVolume v(small, 0.0);
        CHECK_THROWS_AS(evaluate_pair(v, v, bad), std::invalid_argument);
    }
}
