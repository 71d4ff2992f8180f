#include "spritediff/optim.hpp"

#include <cmath>

#include "spritediff/errors.hpp"

namespace spritediff {

void Adam::add_group(const std::vector<Tensor>& params, double lr) {
    if (lr <= 0.0) throw ConfigError("adam: learning rate must be positive");
    for (const auto& p : params) {
        if (!p.defined()) throw ContractError("adam: undefined parameter");
        Slot s;
        s.param = p;
        s.lr = lr;
        s.m.assign(p.numel(), 0.0);
        s.v.assign(p.numel(), 0.0);
        slots_.push_back(std::move(s));
    }
}

void Adam::zero_grad() {
    for (auto& s : slots_) s.param.zero_grad();
}

void Adam::step() {
    ++step_count_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (auto& s : slots_) {
        if (!s.param.has_grad()) continue;
        const auto& g = s.param.grad();
        auto& w = s.param.mutable_data();
        for (size_t i = 0; i < w.size(); ++i) {
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * g[i];
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            double mhat = s.m[i] / bc1;
            double vhat = s.v[i] / bc2;
            w[i] -= s.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace spritediff
