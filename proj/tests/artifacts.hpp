#pragma once

// Recipe and location of the cached toy artifacts shared by the slow tests.

#include "onrw/archive.hpp"
#include "onrw/codec.hpp"
#include "onrw/diffusion.hpp"
#include "onrw/removal.hpp"

#include <string>

#ifndef ONRW_ARTIFACT_DIR
#define ONRW_ARTIFACT_DIR "artifacts"
#endif

namespace onrw::test {

struct ArtifactRecipe {
    int resolution = 32;
    int k = 16;
    int train_count = 500;
    std::uint64_t train_seed = 11;
    int heldout_count = 100;
    std::uint64_t heldout_seed = 12345;

    diffusion::ModelConfig model;
    diffusion::TrainConfig model_train;
    std::uint64_t model_seed = 5;

    codec::DecoderConfig decoder{16, 32, 16, 8};
    codec::DecoderTrainConfig decoder_train;
    std::uint64_t decoder_seed = 3;

    eval::AutoencoderConfig autoencoder;
    eval::AutoencoderTrainConfig autoencoder_train;
    std::uint64_t autoencoder_seed = 1;

    nlohmann::json data_json() const { return {{"count", train_count}, {"seed", train_seed}, {"resolution", resolution}}; }
    nlohmann::json model_json() const
    {
        return {{"data", data_json()}, {"model", model.to_json()}, {"train", model_train.to_json()}, {"seed", model_seed}};
    }
    nlohmann::json decoder_json() const
    {
        return {{"data", data_json()}, {"heldout", {heldout_count, heldout_seed}}, {"decoder", decoder.to_json()},
                {"train", decoder_train.to_json()}, {"seed", decoder_seed}};
    }
    nlohmann::json autoencoder_json() const
    {
        return {{"data", data_json()}, {"ae", autoencoder.to_json()}, {"train", autoencoder_train.to_json()}, {"seed", autoencoder_seed}};
    }
};

inline std::string artifact(const std::string& name) { return std::string(ONRW_ARTIFACT_DIR) + "/" + name; }

}  // namespace onrw::test
