#include "spritediff/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "spritediff/errors.hpp"
#include "spritediff/ops.hpp"

namespace spritediff {

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t == -1) return 1.0;
    if (t < 0 || t >= T) throw ValueError("schedule: timestep " + std::to_string(t) +
                                          " outside [0," + std::to_string(T) + ")");
    return alpha_bar[t];
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
    if (T <= 0) throw ConfigError("make_schedule: T must be positive");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        double frac = (T == 1) ? 0.0 : static_cast<double>(t) / (T - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        prod *= 1.0 - s.beta[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

NoiseSchedule default_schedule() {
    return make_schedule(kDefaultT, kDefaultBetaStart, kDefaultBetaEnd);
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (!same_shape(x0.shape(), eps.shape()))
        throw ShapeError("q_sample: x0 " + shape_str(x0.shape()) + " vs eps " +
                         shape_str(eps.shape()));
    double ab = sched.alpha_bar_at(t);
    return add(mul_scalar(x0, std::sqrt(ab)), mul_scalar(eps, std::sqrt(1.0 - ab)));
}

Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& sched) {
    if (!same_shape(x_t.shape(), eps_hat.shape()))
        throw ShapeError("ddim_step: x_t " + shape_str(x_t.shape()) + " vs eps_hat " +
                         shape_str(eps_hat.shape()));
    if (t_prev > t) throw ValueError("ddim_step: t_prev must not exceed t");
    if (t_prev == t) return x_t.detach();
    double ab = sched.alpha_bar_at(t);
    double ab_prev = sched.alpha_bar_at(t_prev);
    double sq = std::sqrt(ab), sq1 = std::sqrt(1.0 - ab);
    const auto& xd = x_t.data();
    const auto& ed = eps_hat.data();
    std::vector<double> out(xd.size());
    double sqp = std::sqrt(ab_prev), sqp1 = std::sqrt(1.0 - ab_prev);
    for (size_t i = 0; i < out.size(); ++i) {
        double x0 = (xd[i] - sq1 * ed[i]) / sq;
        x0 = std::clamp(x0, -1.0, 1.0);
        out[i] = sqp * x0 + sqp1 * ed[i];
    }
    return Tensor::from_data(x_t.shape(), std::move(out));
}

Tensor ddpm_step(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                 Rng& rng) {
    if (!same_shape(x_t.shape(), eps_hat.shape()))
        throw ShapeError("ddpm_step: x_t " + shape_str(x_t.shape()) + " vs eps_hat " +
                         shape_str(eps_hat.shape()));
    double ab = sched.alpha_bar_at(t);
    double beta = sched.beta[t];
    double alpha = 1.0 - beta;
    double ab_prev = (t == 0) ? 1.0 : sched.alpha_bar[t - 1];
    double sigma = (t == 0) ? 0.0 : std::sqrt((1.0 - ab_prev) / (1.0 - ab) * beta);
    double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
    double eps_coef = beta / std::sqrt(1.0 - ab);
    const auto& xd = x_t.data();
    const auto& ed = eps_hat.data();
    std::vector<double> out(xd.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double mean = inv_sqrt_alpha * (xd[i] - eps_coef * ed[i]);
        out[i] = (sigma == 0.0) ? mean : mean + sigma * rng.gaussian();
    }
    return Tensor::from_data(x_t.shape(), std::move(out));
}

std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps <= 0 || T <= 0) throw ConfigError("ddim_timesteps: steps and T must be positive");
    steps = std::min(steps, T);
    std::vector<int> ts;
    ts.reserve(steps + 1);
    for (int i = 0; i < steps; ++i) {
        double f = (steps == 1) ? 0.0 : static_cast<double>(i) / (steps - 1);
        int t = static_cast<int>(std::lround((1.0 - f) * (T - 1)));
        if (ts.empty() || ts.back() != t) ts.push_back(t);
    }
    ts.push_back(-1);  // final hop to the clean endpoint
    return ts;
}

}  // namespace spritediff
