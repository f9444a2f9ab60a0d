#pragma once

// Small class-conditional pixel-space diffusion model with DDIM sampling,
// classifier-free guidance and attention capture.
//
// DDIM step indices run k = 1..T; the state after step k of inversion (or
// before step k of denoising) is x_k, with x_0 the clean image. Step k uses
// training timestep tau_k = (k-1) * (num_train_steps / T).

#include "onrw/autograd.hpp"
#include "onrw/dataset.hpp"
#include "onrw/nn.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace onrw::diffusion {

struct NoiseSchedule {
    int num_train_steps = 0;
    std::vector<double> betas;
    std::vector<double> alphas_cumprod;

    static NoiseSchedule linear(int steps, double beta_start, double beta_end);
    /// Throws if the schedule breaks its invariants.
    void validate() const;
    /// abar(tau); tau < 0 denotes the clean end of the chain and returns 1.
    double alpha_bar(int tau) const { return tau < 0 ? 1.0 : alphas_cumprod.at(tau); }
};

struct ModelConfig {
    int resolution = 32;
    int patch = 4;
    int ch1 = 32;  // channels at the patch grid
    int ch2 = 64;  // channels at half the patch grid
    int groups = 8;
    int attn_dim = 32;
    int token_dim = 32;
    int tokens_per_class = 4;
    int num_classes = data::kNumClasses;
    int time_dim = 64;
    int embed_dim = 128;
    int num_train_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int ddim_steps = 20;

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    void validate() const;
};

struct ConditionEmbedding {
    Tensor tokens;  // [tokens_per_class, token_dim]
    bool is_null = false;
};

/// Attention probabilities recorded while the graph is alive.
struct AttentionRecord {
    int layer = 0;
    bool self = false;
    int height = 0;
    int width = 0;
    ag::Var probs;  // [B, queries, keys]
};

struct AttentionCapture {
    std::vector<AttentionRecord> records;
    int null_batch = -1;  // batch row of the unconditional branch, if evaluated
    int cond_batch = -1;
};

/// One captured map for a single guidance branch.
struct AttentionMap {
    int step = 0;
    int layer = 0;
    bool conditional = true;
    int height = 0;
    int width = 0;
    Tensor probs;  // [queries, keys]
};

struct AttentionBundle {
    std::vector<AttentionMap> self_maps;
    std::vector<AttentionMap> cross_maps;

    void append(const AttentionCapture& cap, int step);
    /// Largest deviation of any attention row sum from 1.
    float max_row_error() const;
};

struct DenoiserOutput {
    Tensor predicted_noise;
    std::optional<AttentionBundle> attention;
};

/// Per-step sequence x_0..x_T plus the null embedding used at each step.
struct LatentTrajectory {
    std::vector<Tensor> states;                       // states[k] = x_k
    std::vector<ConditionEmbedding> null_embeddings;  // null_embeddings[k-1] is used at step k
    float guidance = 1.0f;
    ConditionEmbedding cond;
    std::optional<AttentionBundle> attention;

    int steps() const { return static_cast<int>(states.size()) - 1; }
    const Tensor& x0() const { return states.front(); }
    const Tensor& xT() const { return states.back(); }
    void validate(const Shape& image_shape) const;
};

class DiffusionModel {
public:
    DiffusionModel() = default;
    DiffusionModel(ModelConfig cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }
    std::uint64_t seed() const { return seed_; }

    ConditionEmbedding condition(int label) const;
    ConditionEmbedding null_embedding() const;
    Shape image_shape(int batch = 1) const { return {batch, 3, cfg_.resolution, cfg_.resolution}; }

    /// Noise prediction for x [B,3,R,R] at per-sample training timesteps and
    /// per-sample token context [B, tokens, token_dim].
    ag::Var predict_noise(const nn::Bound& p, ag::Var x, const std::vector<int>& taus, ag::Var context,
                          AttentionCapture* capture) const;

    std::uint64_t checksum() const { return params_.checksum(); }

    void save(const std::string& path, const nlohmann::json& extra = {}) const;
    static DiffusionModel load(const std::string& path, nlohmann::json* meta = nullptr);

private:
    void init_parameters(Rng& rng);

    ModelConfig cfg_;
    NoiseSchedule schedule_;
    nn::ParameterStore params_;
    std::uint64_t seed_ = 0;
};

/// DDIM sampler over a fixed number of steps T.
class Sampler {
public:
    explicit Sampler(const DiffusionModel& model, int steps = -1);

    const DiffusionModel& model() const { return *model_; }
    int steps() const { return steps_; }
    int timestep(int k) const;
    /// abar for state x_k; x_0 is the clean end and has abar = 1.
    double alpha_bar_state(int k) const;

    /// eps_null + g (eps_cond - eps_null). g = 0 evaluates only the null branch
    /// and g = 1 only the conditional one, so both limits are exact.
    ag::Var guided_noise(const nn::Bound& p, ag::Var x, int k, ag::Var cond_tokens, ag::Var null_tokens, float guidance,
                         AttentionCapture* capture) const;
    /// x_k -> x_{k-1} with eta = 0.
    ag::Var ddim_step(ag::Var x, ag::Var eps, int k) const;
    /// x_{k-1} -> x_k (inversion direction) with eps predicted at x_{k-1}.
    ag::Var inversion_step(ag::Var x_prev, ag::Var eps, int k) const;

    struct StepResult {
        DenoiserOutput output;
        Tensor x_prev;
    };
    StepResult denoise_step(const Tensor& x_t, int k, const ConditionEmbedding& cond, const ConditionEmbedding& null,
                            float guidance, bool capture_attention) const;

    /// Full denoise from x_T. null_schedule holds T entries or a single shared one.
    LatentTrajectory denoise_trajectory(const Tensor& x_T, const ConditionEmbedding& cond,
                                        const std::vector<ConditionEmbedding>& null_schedule, float guidance,
                                        bool capture_attention) const;

    void check_image(const Tensor& x) const;

private:
    const DiffusionModel* model_;
    int steps_;
    int stride_;
};

/// Forward-noise x_0 to DDIM state k: sqrt(abar) x_0 + sqrt(1 - abar) z.
Tensor add_noise(const Sampler& sampler, const Tensor& x0, int k, const Tensor& z);

struct TrainConfig {
    int steps = 2000;
    int batch = 32;
    float lr = 2e-3f;
    float cfg_dropout = 0.1f;
    float grad_clip = 1.0f;
    int eval_batch = 64;
    int log_every = 100;

    nlohmann::json to_json() const;
};

struct TrainReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<std::pair<int, double>> curve;  // (step, mean batch loss since last log)
    double seconds = 0.0;

    nlohmann::json to_json() const;
};

/// Noise-prediction MSE training with condition dropout. Deterministic for a fixed seed.
DiffusionModel train_toy_model(const data::Dataset& dataset, const ModelConfig& model_cfg, const TrainConfig& cfg,
                               std::uint64_t seed, TrainReport* report = nullptr);

/// Mean noise-MSE on a fixed probe set (deterministic given seed).
double evaluate_noise_mse(const DiffusionModel& model, const data::Dataset& dataset, int count, std::uint64_t seed);

/// Builds the [B, tokens, D] context for the given labels, -1 meaning the null embedding.
ag::Var gather_context(const nn::Bound& p, const ModelConfig& cfg, const std::vector<int>& labels);

}  // namespace onrw::diffusion
