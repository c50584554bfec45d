#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace oflow {

/// Bias-corrected adaptive moments with decoupled weight decay.
struct OptimizerState {
    std::vector<double> m;  // first moment
    std::vector<double> v;  // second moment
    int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    OptimizerState() = default;
    explicit OptimizerState(size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One AdamW step; decay is applied directly to the parameters, not through
/// the moments.
inline void adamw_update(std::vector<double>& params, const std::vector<double>& grads,
                         OptimizerState& opt, double lr, double weight_decay) {
    if (params.size() != grads.size() || params.size() != opt.m.size())
        throw std::invalid_argument("adamw_update: length mismatch");
    opt.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (size_t p = 0; p < params.size(); ++p) {
        const double g = grads[p];
        opt.m[p] = opt.beta1 * opt.m[p] + (1.0 - opt.beta1) * g;
        opt.v[p] = opt.beta2 * opt.v[p] + (1.0 - opt.beta2) * g * g;
        const double mhat = opt.m[p] / bc1;
        const double vhat = opt.v[p] / bc2;
        params[p] -= lr * (mhat / (std::sqrt(vhat) + opt.eps) + weight_decay * params[p]);
    }
}

}  // namespace oflow
