#pragma once

// Watermark embedding by optimizing the inversion noise x_T through the full
// guided denoise, a pseudo mask blend, one sampled attack and the decoder.

#include "onrw/attack.hpp"
#include "onrw/codec.hpp"
#include "onrw/diffusion.hpp"
#include "onrw/inversion.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace onrw::embed {

using diffusion::AttentionBundle;
using diffusion::ConditionEmbedding;
using diffusion::LatentTrajectory;
using diffusion::Sampler;

enum class MaskMode { none, soft, hard };
enum class Upsampling { nearest, bilinear };

std::string mask_mode_name(MaskMode m);
MaskMode parse_mask_mode(const std::string& s);
std::string upsampling_name(Upsampling u);
Upsampling parse_upsampling(const std::string& s);

struct PseudoMask {
    Tensor source;             // aggregated attention P on the finest cross-attention grid
    Tensor soft;               // [H,W] in [0,1] with max 1
    std::optional<Tensor> hard;  // [H,W] in {0,1}
    Upsampling upsampling = Upsampling::bilinear;

    /// The mask used for blending: hard when present, soft otherwise.
    const Tensor& effective() const { return hard ? *hard : soft; }
    nlohmann::json stats() const;
};

/// Constant mask, mostly for tests and the degenerate blend cases.
PseudoMask constant_mask(int height, int width, float value);

/// Upsamples an [h,w] map to [H,W] (integer factor) and rescales it so its maximum is 1.
Tensor upsample_normalized(const Tensor& p, int height, int width, Upsampling mode);
/// Strict threshold: 1 where soft > 0.5.
Tensor harden(const Tensor& soft);

/// P = mean over all conditional cross-attention maps of the probability mass
/// each position puts on the condition tokens (the leading anchor key is
/// excluded). Coarser maps are upsampled to the finest grid first.
PseudoMask compute_pseudo_mask(const AttentionBundle& bundle, int height, int width, Upsampling mode, bool hard);
PseudoMask compute_pseudo_mask(const LatentTrajectory& traj, int height, int width, Upsampling mode, bool hard);

/// sum_j (sigmoid(D(x)_j) - bit_j)^2
ag::Var loss_decode(ag::Var image, const codec::Decoder& decoder, const codec::BitMessage& message);

/// Sum of squared differences over every self-attention map at every step.
ag::Var loss_self_attention(const std::vector<ag::Var>& current, const std::vector<Tensor>& fixed);
double loss_self_attention(const AttentionBundle& current, const AttentionBundle& fixed);

struct MaskedMse {
    ag::Var loss;     // ||blend - x_0||_2, not squared
    ag::Var blended;  // x'_0 * M + x_0 * (1 - M)
};
/// mask == nullptr means M = 1 everywhere.
MaskedMse loss_mse_masked(ag::Var x0_prime, const Tensor& x0, const Tensor* mask);

struct EmbedConfig {
    float alpha = 100.0f;
    float beta = 80.0f;
    float gamma = 20.0f;
    int iterations = 120;
    float lr = 1e-2f;
    MaskMode mask_mode = MaskMode::soft;
    Upsampling upsampling = Upsampling::bilinear;
    float guidance = 4.5f;
    codec::BitMessage message;
    attack::AttackPool attack_pool = attack::AttackPool::defaults();
    inversion::NullTextOptions null_text;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
};

struct LossRecord {
    double decode = 0.0;
    double self_attention = 0.0;
    double mse = 0.0;
    double total = 0.0;
    attack::AttackSpec attack;
};

struct EmbedResult {
    Tensor watermarked;      // blended, 8-bit quantized
    Tensor optimized_noise;  // x'_T
    Tensor reconstruction;   // null-text reconstruction before optimization
    std::vector<LossRecord> loss_history;
    PseudoMask mask;
    double clean_bit_accuracy = 0.0;
    bool failed = false;
    double seconds = 0.0;

    nlohmann::json to_json() const;
};

/// Inputs shared by every embed of the same image: null-text trajectory, fixed
/// self-attention maps and mask source. Independent of the message and weights.
struct Preparation {
    LatentTrajectory trajectory;  // null-text optimized, guidance as configured
    AttentionBundle fixed_attention;
    std::vector<Tensor> fixed_self;  // raw [B,Nq,Nk] self-attention probabilities per step/layer
    Tensor reconstruction;
};
Preparation prepare(const Sampler& sampler, const Tensor& x0, const ConditionEmbedding& cond, float guidance,
                    const inversion::NullTextOptions& null_text);

EmbedResult embed(const Sampler& sampler, const Tensor& x0, const ConditionEmbedding& cond, const codec::Decoder& decoder,
                  const EmbedConfig& cfg);
/// Same, reusing a preparation made with the same guidance.
EmbedResult embed(const Sampler& sampler, const Tensor& x0, const Preparation& prep, const codec::Decoder& decoder,
                  const EmbedConfig& cfg);

}  // namespace onrw::embed
