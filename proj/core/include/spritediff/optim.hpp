#pragma once

#include <cstdint>
#include <vector>

#include "spritediff/tensor.hpp"

namespace spritediff {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam with per-group learning rates. Parameters are updated in registration
// order; the moment buffers are exposed so checkpoints can persist them and
// resume a run bit-exactly.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    void add_group(const std::vector<Tensor>& params, double lr);
    void zero_grad();
    void step();

    int64_t step_count() const { return step_count_; }
    void set_step_count(int64_t t) { step_count_ = t; }

    struct Slot {
        Tensor param;
        double lr;
        std::vector<double> m;
        std::vector<double> v;
    };
    std::vector<Slot>& slots() { return slots_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<Slot> slots_;
    int64_t step_count_ = 0;
};

}  // namespace spritediff
