#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oflow/losses.hpp"
#include "oflow/rng.hpp"
#include "oflow/student.hpp"
#include "test_support.hpp"

using namespace oflow;

namespace {

ScalarVolume small_volume(const GridShape& s, Rng& rng, double scale = 10.0) {
    ScalarVolume v(s);
    for (double& x : v.data) x = rng.uniform(-scale, scale);
    return v;
}

StudentConfig tiny_config(uint64_t seed = 0) {
    StudentConfig cfg;
    cfg.base_width = 4;
    cfg.seed = seed;
    return cfg;
}

// Randomize every parameter so no gradient path is structurally dead.
void randomize_params(StudentNet& net, uint64_t seed) {
    Rng rng(seed);
    for (double& p : net.params) p += rng.uniform(-0.05, 0.05);
}

}  // namespace

TEST_CASE("initialization contracts", "[student]") {
    SECTION("zero velocity at init for any input") {
        StudentNet net(tiny_config(7));
        GridShape s(6);
        Rng rng(1);
        ScalarVolume x = small_volume(s, rng, 500.0), c = small_volume(s, rng, 500.0);
        ScalarVolume v = forward(net, x, 0.37, c);
        for (double y : v.data) CHECK(y == 0.0);
    }
    SECTION("same seed reproduces the parameter vector bitwise") {
        StudentNet a(tiny_config(11)), b(tiny_config(11));
        REQUIRE(a.params.size() == b.params.size());
        for (size_t p = 0; p < a.params.size(); ++p) CHECK(a.params[p] == b.params[p]);
    }
    SECTION("different seeds differ in nearly every randomly-initialized entry") {
        StudentConfig cfg = tiny_config(1);
        StudentNet a(cfg);
        cfg.seed = 2;
        StudentNet b(cfg);
        // structural zeros (FiLM output projections, final layer) are zero for
        // every seed; count them via the layout
        size_t structural = 0;
        for (const char* name : {"enc.film.fc2.w", "enc.film.fc2.b", "mid.film.fc2.w",
                                 "mid.film.fc2.b", "out.w", "out.b"})
            structural += a.layout.find(name).count;
        size_t differing = 0;
        for (size_t p = 0; p < a.params.size(); ++p)
            if (a.params[p] != b.params[p]) ++differing;
        const size_t random_entries = a.params.size() - structural;
        CHECK(differing >= static_cast<size_t>(0.99 * static_cast<double>(random_entries)));
        // the non-differing remainder is exactly the structurally-zero slices
        CHECK(a.params.size() - differing == structural);
    }
    SECTION("default desk config has the documented parameter count") {
        StudentConfig cfg;  // base_width 8, embed 16
        CHECK(student_layout(cfg).total == 29537u);
        CHECK(student_layout(tiny_config()).total == 8129u);
    }
}

TEST_CASE("forward contracts", "[student]") {
    StudentNet net(tiny_config(3));
    randomize_params(net, 99);

    SECTION("output shape equals input shape") {
        for (int n : {6, 24}) {
            GridShape s(n);
            Rng rng(n);
            ScalarVolume x = small_volume(s, rng), c = small_volume(s, rng);
            ScalarVolume v = forward(net, x, 0.5, c);
            CHECK(v.shape == s);
            CHECK(v.role == ScalarRole::velocity);
        }
    }
    SECTION("t outside [0,1] throws") {
        GridShape s(6);
        Rng rng(2);
        ScalarVolume x = small_volume(s, rng), c = small_volume(s, rng);
        CHECK_THROWS_AS(forward(net, x, -0.1, c), std::invalid_argument);
        CHECK_THROWS_AS(forward(net, x, 1.5, c), std::invalid_argument);
    }
    SECTION("forward is deterministic") {
        GridShape s(8);
        Rng rng(4);
        ScalarVolume x = small_volume(s, rng), c = small_volume(s, rng);
        ScalarVolume a = forward(net, x, 0.3, c), b = forward(net, x, 0.3, c);
        for (size_t p = 0; p < a.data.size(); ++p) CHECK(a.data[p] == b.data[p]);
    }
    SECTION("doubling the final projection weights doubles the output") {
        GridShape s(6);
        Rng rng(5);
        ScalarVolume x = small_volume(s, rng), c = small_volume(s, rng);
        ScalarVolume v1 = forward(net, x, 0.7, c);
        StudentNet net2 = net;
        const auto& ow = net2.layout.find("out.w");
        const auto& ob = net2.layout.find("out.b");
        for (size_t q = 0; q < ow.count; ++q) net2.params[ow.offset + q] *= 2.0;
        for (size_t q = 0; q < ob.count; ++q) net2.params[ob.offset + q] *= 2.0;
        ScalarVolume v2 = forward(net2, x, 0.7, c);
        for (size_t p = 0; p < v1.data.size(); ++p)
            CHECK(v2.data[p] == Catch::Approx(2.0 * v1.data[p]).margin(1e-12));
    }
    SECTION("FiLM identity: time has no effect while projections are at init") {
        StudentNet fresh(tiny_config(6));
        // perturb everything except the FiLM output projections
        Rng rng(8);
        for (const auto& sl : fresh.layout.slices) {
            if (sl.name.find("film.fc2") != std::string::npos) continue;
            if (sl.name == "out.w" || sl.name == "out.b") {
                for (size_t q = 0; q < sl.count; ++q) fresh.params[sl.offset + q] = rng.uniform(-0.3, 0.3);
                continue;
            }
            for (size_t q = 0; q < sl.count; ++q) fresh.params[sl.offset + q] += rng.uniform(-0.05, 0.05);
        }
        GridShape s(6);
        Rng vr(9);
        ScalarVolume x = small_volume(s, vr), c = small_volume(s, vr);
        ScalarVolume a = forward(fresh, x, 0.1, c), b = forward(fresh, x, 0.9, c);
        for (size_t p = 0; p < a.data.size(); ++p) CHECK(a.data[p] == b.data[p]);
    }
}

TEST_CASE("backward matches finite differences", "[student]") {
    GridShape s(6);
    StudentNet net(tiny_config(13));
    randomize_params(net, 42);
    Rng rng(77);
    ScalarVolume x = small_volume(s, rng), cond = small_volume(s, rng);
    ScalarVolume y1 = small_volume(s, rng);
    const double t = 0.42;

    // probe loss L = 1/2 ||v||^2 -> upstream = v
    auto probe_loss = [&](const StudentNet& n) {
        ScalarVolume v = forward(n, x, t, cond);
        double acc = 0.0;
        for (double q : v.data) acc += 0.5 * q * q;
        return acc;
    };

    SECTION("zero upstream gives zero gradient") {
        ForwardCache cache;
        forward(net, x, t, cond, &cache);
        std::vector<double> grad(net.param_count(), 0.0);
        backward(net, cache, ScalarVolume(s), grad);
        for (double g : grad) CHECK(g == 0.0);
    }
    SECTION("missing cache throws") {
        ForwardCache cache;
        std::vector<double> grad(net.param_count(), 0.0);
        CHECK_THROWS_AS(backward(net, cache, ScalarVolume(s), grad), std::invalid_argument);
    }
    SECTION("parameter gradient of 1/2||forward||^2, 25 probes") {
        ForwardCache cache;
        ScalarVolume v = forward(net, x, t, cond, &cache);
        std::vector<double> grad(net.param_count(), 0.0);
        backward(net, cache, v, grad);
        Rng probe(5);
        for (int q = 0; q < 25; ++q) {
            const size_t idx =
                static_cast<size_t>(probe.uniform_int(0, static_cast<int64_t>(net.param_count()) - 1));
            const double h = 1e-4;
            StudentNet plus = net, minus = net;
            plus.params[idx] += h;
            minus.params[idx] -= h;
            const double fd = (probe_loss(plus) - probe_loss(minus)) / (2.0 * h);
            const double an = grad[idx];
            const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
            CHECK(std::fabs(fd - an) / denom < 1e-5);
        }
    }
    SECTION("input gradient w.r.t. x_t, 10 probes") {
        ForwardCache cache;
        ScalarVolume v = forward(net, x, t, cond, &cache);
        std::vector<double> grad(net.param_count(), 0.0);
        ScalarVolume dx(s);
        backward(net, cache, v, grad, &dx);
        Rng probe(6);
        auto loss_at = [&](const ScalarVolume& xs) {
            ScalarVolume vv = forward(net, xs, t, cond);
            double acc = 0.0;
            for (double q : vv.data) acc += 0.5 * q * q;
            return acc;
        };
        for (int q = 0; q < 10; ++q) {
            const size_t idx =
                static_cast<size_t>(probe.uniform_int(0, static_cast<int64_t>(x.data.size()) - 1));
            const double h = 1e-4;
            ScalarVolume plus = x, minus = x;
            plus.data[idx] += h;
            minus.data[idx] -= h;
            const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
            const double an = dx.data[idx];
            const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
            CHECK(std::fabs(fd - an) / denom < 1e-5);
        }
    }
    SECTION("composed rectified-flow and distillation losses") {
        auto svf = testgen::smooth_svf(s, 0.8, 55);
        TeacherTrajectory teacher(svf, cond, 0.05);
        auto total_loss = [&](const StudentNet& n) {
            ScalarVolume v = forward(n, x, t, cond);
            return loss_rf(v, cond, y1).value + loss_lyap(v, x, t, teacher, 1.0).value;
        };
        ForwardCache cache;
        ScalarVolume v = forward(net, x, t, cond, &cache);
        LossResult lrf = loss_rf(v, cond, y1);
        LossResult lly = loss_lyap(v, x, t, teacher, 1.0);
        ScalarVolume upstream(s);
        for (size_t p = 0; p < upstream.data.size(); ++p)
            upstream.data[p] = lrf.grad.data[p] + lly.grad.data[p];
        std::vector<double> grad(net.param_count(), 0.0);
        backward(net, cache, upstream, grad);
        Rng probe(9);
        auto central = [&](size_t idx, double h) {
            StudentNet plus = net, minus = net;
            plus.params[idx] += h;
            minus.params[idx] -= h;
            return (total_loss(plus) - total_loss(minus)) / (2.0 * h);
        };
        for (int q = 0; q < 25; ++q) {
            const size_t idx =
                static_cast<size_t>(probe.uniform_int(0, static_cast<int64_t>(net.param_count()) - 1));
            // loss values here are O(100) while some coordinate gradients are
            // O(1e-6); Richardson extrapolation with a larger base step keeps
            // the quotient clear of cancellation noise
            const double h = 1e-2;
            const double fd = (4.0 * central(idx, 0.5 * h) - central(idx, h)) / 3.0;
            const double an = grad[idx];
            const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
            CHECK(std::fabs(fd - an) / denom < 1e-5);
        }
    }
}
