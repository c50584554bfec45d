#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "oflow/common.hpp"
#include "oflow/student.hpp"
#include "oflow/volume.hpp"

namespace oflow {

enum class Solver { euler, rk4 };

inline std::string to_string(Solver s) { return s == Solver::euler ? "euler" : "rk4"; }

/// All states of one trajectory integration on the uniform time grid
/// t_n = n * step, n = 0..N.
struct RolloutResult {
    std::vector<ScalarVolume> states;
    Solver solver = Solver::euler;
    double step = 0.1;

    int grid_steps() const { return static_cast<int>(states.size()) - 1; }
};

namespace detail {

inline int steps_from(double step) {
    if (!(step > 0.0) || step > 1.0) throw std::invalid_argument("rollout: step must be in (0,1]");
    const double n = 1.0 / step;
    const double rounded = std::round(n);
    if (std::fabs(n - rounded) > 1e-9 * rounded)
        throw std::invalid_argument("rollout: step must divide 1 evenly");
    return static_cast<int>(rounded);
}

inline void check_finite_state(const ScalarVolume& x, double t) {
    if (!x.all_finite())
        throw NumericError("rollout: non-finite state at t = " + std::to_string(t));
}

}  // namespace detail

/// Integrate dx/dt = net(x, t; x_d5) from t = 0 to 1, retaining every state.
/// Caches, when requested, hold the per-step forward activations so training
/// can differentiate through the discrete rollout (Euler only).
inline RolloutResult rollout(const StudentNet& net, const ScalarVolume& x_d5, Solver solver,
                             double step, std::vector<ForwardCache>* caches = nullptr) {
    const int n = detail::steps_from(step);
    const double h = 1.0 / n;
    if (caches && solver != Solver::euler)
        throw std::invalid_argument("rollout: activation caching is for the Euler training path");
    RolloutResult r;
    r.solver = solver;
    r.step = h;
    r.states.reserve(n + 1);
    r.states.push_back(x_d5);
    if (caches) {
        caches->clear();
        caches->resize(n);
    }
    ScalarVolume x = x_d5;
    for (int i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) * h;
        if (solver == Solver::euler) {
            ScalarVolume v = forward(net, x, t, x_d5, caches ? &(*caches)[i] : nullptr);
            for (size_t p = 0; p < x.data.size(); ++p) x.data[p] += h * v.data[p];
        } else {
            ScalarVolume k1 = forward(net, x, t, x_d5);
            ScalarVolume k2 = forward(net, axpy(x, 0.5 * h, k1), t + 0.5 * h, x_d5);
            ScalarVolume k3 = forward(net, axpy(x, 0.5 * h, k2), t + 0.5 * h, x_d5);
            ScalarVolume k4 = forward(net, axpy(x, h, k3), std::min(t + h, 1.0), x_d5);
            for (size_t p = 0; p < x.data.size(); ++p)
                x.data[p] += h / 6.0 * (k1.data[p] + 2.0 * k2.data[p] + 2.0 * k3.data[p] + k4.data[p]);
        }
        detail::check_finite_state(x, (i + 1) * h);
        r.states.push_back(x);
    }
    return r;
}

/// Stored state at the grid time nearest to t (ties round up), plus that
/// snapped time. All downstream evaluations of the sample use the snapped t.
inline std::pair<ScalarVolume, double> state_at(const RolloutResult& r, double t) {
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("state_at: t must be in [0,1]");
    const int n = r.grid_steps();
    int idx = static_cast<int>(std::floor(t * n + 0.5));
    if (idx > n) idx = n;
    return {r.states[static_cast<size_t>(idx)], static_cast<double>(idx) / n};
}

/// Inference: RK4 integration at the configured step, endpoint clamped to the
/// HU window. Takes only the network and the early volume; no teacher exists
/// on this path.
inline ScalarVolume infer(const StudentNet& net, const ScalarVolume& x_d5, double step = 0.1,
                          Solver solver = Solver::rk4) {
    RolloutResult r = rollout(net, x_d5, solver, step);
    ScalarVolume out = r.states.back();
    out.window_hu();
    out.role = ScalarRole::intensity;
    return out;
}

}  // namespace oflow
