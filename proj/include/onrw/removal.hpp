#pragma once

// Watermark removal attacks: diffusion regeneration and a small trained
// autoencoder whose nested bottleneck width acts as a quality knob.

#include "onrw/dataset.hpp"
#include "onrw/diffusion.hpp"
#include "onrw/nn.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace onrw::eval {

/// Forward-noise to DDIM state ceil(t * T) with a seeded draw, then denoise
/// unconditionally (guidance 0, null embedding) back to x_0, 8-bit quantized.
Tensor regeneration_attack(const diffusion::Sampler& sampler, const Tensor& image, double t_strength, std::uint64_t seed);

struct AutoencoderConfig {
    int resolution = 32;
    int width = 32;
    /// Latent channels kept at quality level 1..N; increasing, the last is the full latent.
    std::vector<int> levels = {1, 2, 4, 8, 16};

    int levels_count() const { return static_cast<int>(levels.size()); }
    int latent_channels() const { return levels.back(); }
    nlohmann::json to_json() const;
    static AutoencoderConfig from_json(const nlohmann::json& j);
    void validate() const;
};

struct AutoencoderTrainConfig {
    int steps = 1500;
    int batch = 16;
    float lr = 2e-3f;
    int log_every = 100;

    nlohmann::json to_json() const;
};

class Autoencoder {
public:
    Autoencoder() = default;
    Autoencoder(AutoencoderConfig cfg, std::uint64_t seed);

    const AutoencoderConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return params_; }

    /// Reconstruction keeping the first levels[level-1] latent channels (level is 1-based).
    ag::Var reconstruct(const nn::Bound& p, ag::Var image, int level) const;
    /// Inference round trip clamped and quantized to 8 bits.
    Tensor round_trip(const Tensor& image, int level) const;

    std::uint64_t checksum() const { return params_.checksum(); }
    void save(const std::string& path, const nlohmann::json& extra = {}) const;
    static Autoencoder load(const std::string& path, nlohmann::json* meta = nullptr);

private:
    AutoencoderConfig cfg_;
    nn::ParameterStore params_;
};

struct AutoencoderTrainReport {
    std::vector<double> level_psnr;  // on the held-out set, per level
    std::vector<std::pair<int, double>> curve;
    double seconds = 0.0;

    nlohmann::json to_json() const;
};

/// MSE training with a random bottleneck level per step, so every prefix of
/// the latent is a usable code. Deterministic for a fixed seed.
Autoencoder train_autoencoder(const data::Dataset& train, const data::Dataset& heldout, const AutoencoderConfig& cfg,
                              const AutoencoderTrainConfig& tc, std::uint64_t seed, AutoencoderTrainReport* report = nullptr);

/// `level` in 1..levels; throws outside that range.
Tensor autoencoder_attack(const Autoencoder& ae, const Tensor& image, int level);

}  // namespace onrw::eval
