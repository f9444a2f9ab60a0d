#pragma once

// Wiring shared by the CLI and the acceptance harness: artifact loading and
// the benchmark method and attack closures.

#include "onrw/bench.hpp"
#include "onrw/config.hpp"

#include <memory>
#include <optional>

namespace onrw::cli {

/// Absolute paths pass through; relative ones are placed under the output root.
std::string resolve(const RunConfig& cfg, const std::string& path);

/// Fits the configured whitening on clean toy images when enabled.
void apply_whitening(const RunConfig& cfg, codec::Decoder& decoder);

/// Embed settings from the config for one image's message and seed.
embed::EmbedConfig embed_config(const RunConfig& cfg, const codec::BitMessage& message, std::uint64_t seed);

/// ONRW closure. The sampler, model and decoder must outlive the method.
eval::Method onrw_method(const diffusion::Sampler& sampler, const codec::Decoder& decoder, const RunConfig& cfg,
                         const std::string& name = "ONRW");
eval::Method dwtdct_method();

/// Regeneration at each strength and, when an autoencoder is given, every bottleneck level.
std::vector<eval::ExtraAttack> removal_attacks(const diffusion::Sampler& sampler, const std::vector<double>& strengths,
                                               const eval::Autoencoder* ae);

}  // namespace onrw::cli
