#pragma once

#include "coordatt/blocks.hpp"

#include <functional>

namespace coordatt {

struct CheckCase {
    std::string name;
    double max_rel = 0.0;
    double max_abs = 0.0;
    int redraws = 0;
    bool pass = false;
};

struct CheckReport {
    std::string target;
    double threshold = 1e-6;
    // finite-difference noise gate: |analytic - numeric| at or below this is
    // treated as exact (true-zero gradients pick up ~|f|*eps/h of fp noise)
    double noise_floor = 1e-9;
    std::vector<CheckCase> cases;
    double max_rel = 0.0;
    bool pass = true;
};

// Central differences, (f(x+h*e_i) - f(x-h*e_i)) / (2h) per element.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double step = 1e-5);

// Max relative error with denominator max(|a|,|n|,1e-12); deltas at or below
// noise_floor contribute zero. max_abs reports the largest raw delta.
double compare_grad(const Tensor& analytic, const Tensor& numeric, double noise_floor,
                    double* max_abs = nullptr);

// Targets: ops (conv2d, linear, batchnorm_train, batchnorm_eval, sigmoid,
// relu, relu6, hard_swish, global_avg_pool, global_max_pool, pool_x, pool_y,
// channel_pool_mean_max, concat_spatial, split_spatial, broadcast_mul,
// mul_broadcast, add, softmax_cross_entropy), blocks (se, cbam, ca, ca_x,
// ca_y, inverted_residual, sandglass), and "network" (two stacked inverted
// residual blocks, 8->8->16 channels, 8x8 input).
const std::vector<std::string>& gradcheck_targets();

// cases_per_target seeded cases; sabotage perturbs the analytic gradient to
// prove the harness can fail. target "all" runs everything.
CheckReport run_gradcheck(const std::string& target, std::uint64_t seed,
                          int cases_per_target = 20, bool sabotage = false);
std::vector<CheckReport> run_gradcheck_all(std::uint64_t seed, int cases_per_target = 20,
                                           bool sabotage = false);

std::string check_reports_to_json(const std::vector<CheckReport>& reports);

struct AgreementReport {
    std::string block;
    int cases = 0;
    double max_abs_diff = 0.0;
    double threshold = 1e-10;
    bool pass = false;
};

// Fast path vs independent loop transcription on seeded random inputs.
AgreementReport run_oracle_agreement(AttnKind kind, std::uint64_t seed, int cases = 20);

} // namespace coordatt
