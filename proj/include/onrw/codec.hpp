#pragma once

// Bit messages, the convolutional decoder D and its toy-scale training.

#include "onrw/attack.hpp"
#include "onrw/dataset.hpp"
#include "onrw/nn.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace onrw::codec {

struct BitMessage {
    std::vector<std::uint8_t> bits;

    int size() const { return static_cast<int>(bits.size()); }
    std::string str() const;
    static BitMessage parse(const std::string& s);
    /// Bits as a [1,k] float tensor of 0/1 values.
    Tensor as_tensor() const;
};

BitMessage sample_message(int k, std::uint64_t seed);
double bit_accuracy(const BitMessage& predicted, const BitMessage& truth);

struct DecoderConfig {
    int k = 48;
    int resolution = 64;
    int width = 32;
    int groups = 8;

    nlohmann::json to_json() const;
    static DecoderConfig from_json(const nlohmann::json& j);
    void validate() const;
};

struct Decoded {
    Tensor logits;                  // [B,k]
    std::vector<BitMessage> bits;   // logit > 0 -> 1
};

class Decoder {
public:
    Decoder() = default;
    Decoder(DecoderConfig cfg, std::uint64_t seed);

    const DecoderConfig& config() const { return cfg_; }
    nn::ParameterStore& params() { return params_; }
    const nn::ParameterStore& params() const { return params_; }

    /// Differentiable logits [B,k] for images [B,3,R,R].
    ag::Var logits(const nn::Bound& p, ag::Var image) const;
    /// Binds the weights as constants into `g` and returns the logits.
    ag::Var logits(ag::Graph& g, ag::Var image) const;
    Decoded decode(const Tensor& image) const;

    /// Optional per-bit affine map (x - shift) * scale with positive scale.
    void set_whitening(Tensor shift, Tensor scale);
    void clear_whitening() { whiten_.reset(); }
    bool whitened() const { return whiten_.has_value(); }

    std::uint64_t checksum() const;
    void save(const std::string& path, const nlohmann::json& extra = {}) const;
    static Decoder load(const std::string& path, nlohmann::json* meta = nullptr);

private:
    struct Whitening {
        Tensor shift, scale;
    };
    DecoderConfig cfg_;
    nn::ParameterStore params_;
    std::optional<Whitening> whiten_;
};

/// Fits the whitening map on clean images: per-bit mean and inverse standard deviation.
void fit_whitening(Decoder& decoder, const std::vector<Tensor>& images);

/// sum_i (sigmoid(logit_i) - bit_i)^2, summed over the batch.
ag::Var decode_loss(ag::Var logits, const std::vector<BitMessage>& messages);

struct DecoderTrainConfig {
    int steps = 4000;
    int batch = 32;
    float lr = 2e-3f;             // peak; cosine decay to 10%
    float image_weight = 0.3f;    // weight on the encoder residual energy
    int image_weight_ramp = 300;  // steps over which image_weight rises linearly from 0
    float grad_clip = 0.0f;       // <= 0 disables clipping
    bool use_attacks = true;
    int clean_warmup = 500;       // leading steps trained without attacks
    attack::AttackPool pool = attack::AttackPool::defaults();
    int log_every = 100;

    nlohmann::json to_json() const;
};

struct DecoderTrainReport {
    double clean_accuracy = 0.0;
    double attacked_accuracy = 0.0;
    double residual_psnr = 0.0;  // encoder output vs cover on held-out images
    std::vector<std::pair<int, double>> curve;
    double seconds = 0.0;

    nlohmann::json to_json() const;
};

/// Trains D jointly with a throwaway residual encoder (discarded on return).
/// Accuracies in the report are measured on `heldout` with encoder-marked images.
Decoder train_decoder(const data::Dataset& train, const data::Dataset& heldout, const DecoderConfig& cfg,
                      const DecoderTrainConfig& tc, std::uint64_t seed, DecoderTrainReport* report = nullptr);

}  // namespace onrw::codec
