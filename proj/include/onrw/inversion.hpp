#pragma once

// DDIM inversion and per-step null-text optimization.

#include "onrw/diffusion.hpp"

#include <string>
#include <vector>

namespace onrw::inversion {

using diffusion::ConditionEmbedding;
using diffusion::LatentTrajectory;
using diffusion::Sampler;

/// Reversed DDIM from x_0 to x_T. The returned pivot carries the model's
/// default null embedding at every step, so it can be reconstructed directly.
LatentTrajectory ddim_invert(const Sampler& sampler, const Tensor& x0, const ConditionEmbedding& cond, float guidance = 1.0f);

struct NullTextOptions {
    int inner_iters = 10;
    float lr = 1e-2f;
    int max_halvings = 3;
    double early_stop = 1e-5;
};

struct NullTextReport {
    std::vector<double> initial_loss;  // indexed by step k-1
    std::vector<double> final_loss;
    std::vector<int> accepted_steps;
};

/// For k = T..1 optimizes phi_k so that one guided step from the running
/// state lands on pivot x_{k-1}; phi_k starts from phi_{k+1}.
LatentTrajectory null_text_optimize(const Sampler& sampler, const LatentTrajectory& pivot, const ConditionEmbedding& cond,
                                    float guidance, const NullTextOptions& opt, NullTextReport* report = nullptr);

/// Deterministic denoise of x_T with the trajectory's null schedule, condition and guidance.
Tensor reconstruct(const Sampler& sampler, const LatentTrajectory& traj);

void save_trajectory(const std::string& path, const LatentTrajectory& traj, std::uint64_t config_hash);
LatentTrajectory load_trajectory(const std::string& path, std::uint64_t* config_hash = nullptr);

}  // namespace onrw::inversion
