#pragma once

#include <vector>

#include "spritediff/rng.hpp"
#include "spritediff/tensor.hpp"

namespace spritediff {

// Per-timestep variances and cumulative signal coefficients of the forward
// diffusion process.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t] in (0,1)
    std::vector<double> alpha_bar;  // strictly decreasing cumulative products

    double alpha_bar_at(int t) const;  // t == -1 means the clean endpoint (1.0)
};

// Linear beta interpolation between beta_start and beta_end over T steps.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// Defaults sized for T=100; terminal alpha_bar ~= 2e-5 so the forward
// process actually reaches noise at toy step counts.
inline constexpr int kDefaultT = 100;
inline constexpr double kDefaultBetaStart = 1e-3;
inline constexpr double kDefaultBetaEnd = 0.2;

NoiseSchedule default_schedule();

// sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

// Deterministic (eta=0) reverse step from t to t_prev; t_prev == -1 lands on
// the predicted x0. The x0 prediction is clamped to [-1, 1].
Tensor ddim_step(const Tensor& x_t, const Tensor& eps_hat, int t, int t_prev,
                 const NoiseSchedule& sched);

// Ancestral step with the beta-tilde posterior variance; injects no noise at
// t == 0.
Tensor ddpm_step(const Tensor& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched,
                 Rng& rng);

// Descending timestep sequence for DDIM sampling, ending at -1 (clean).
std::vector<int> ddim_timesteps(int T, int steps);

}  // namespace spritediff
