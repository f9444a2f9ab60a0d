#pragma once

// Run configuration (YAML, fail-closed on unknown keys) and run manifests.

#include "onrw/codec.hpp"
#include "onrw/diffusion.hpp"
#include "onrw/embedder.hpp"
#include "onrw/removal.hpp"
#include "onrw/transforms.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <stdexcept>
#include <string>
#include <vector>

namespace onrw::cli {

/// Schema violation. `diagnostics` holds one line per problem.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> diagnostics);
    const std::vector<std::string>& diagnostics() const { return diagnostics_; }

private:
    std::vector<std::string> diagnostics_;
};

struct DatasetSpec {
    std::string kind = "toy";  // "toy" or "folder"
    int count = 20;
    std::uint64_t seed = 777;
    std::string path;  // folder datasets only

    data::Dataset load(int resolution) const;
    nlohmann::json to_json() const;
};

struct WhiteningSpec {
    bool enabled = true;
    int count = 200;
    std::uint64_t seed = 4242;
};

struct BenchSpec {
    std::vector<std::string> methods = {"ONRW", "DwtDct"};
    std::vector<std::string> transforms;  // empty = the full suite
    std::vector<double> regeneration = {0.1, 0.3, 0.5};
    bool autoencoder_levels = true;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "onrw-out";
    std::string model_path = "model.onrw";
    std::string decoder_path = "decoder.onrw";
    std::string autoencoder_path = "autoencoder.onrw";

    DatasetSpec dataset;                            // evaluation / embedding images
    DatasetSpec train_dataset{"toy", 500, 11, ""};  // training images for every model

    diffusion::ModelConfig model;
    diffusion::TrainConfig model_train;
    codec::DecoderConfig decoder{48, 32, 16, 8};  // k and resolution follow bits and model.resolution
    codec::DecoderTrainConfig decoder_train;
    eval::AutoencoderConfig autoencoder;  // resolution follows model.resolution
    eval::AutoencoderTrainConfig autoencoder_train;
    WhiteningSpec whitening;

    embed::EmbedConfig embed;  // message left empty; drawn per image from the seed
    int bits = 48;
    BenchSpec bench;

    nlohmann::json to_json() const;
    std::uint64_t hash() const;
    /// Output path for a relative artifact name, under ONRW_OUTPUT_ROOT when set.
    std::string output_root() const;
    std::vector<eval::TransformPoint> transform_points() const;
};

/// Throws ConfigError listing every unknown key and invalid value.
RunConfig parse_config(const std::string& yaml_text);
RunConfig load_config(const std::string& path);

/// Message embedded into dataset image `index` under this master seed.
codec::BitMessage image_message(const RunConfig& cfg, int index);

std::string version_string();

class RunManifest {
public:
    RunManifest(std::string command, const RunConfig* cfg);

    void stage(const std::string& name) { stage_ = name; }
    void add_output(const std::string& path) { outputs_.push_back(path); }
    void add_checkpoint(const std::string& role, const std::string& path);
    nlohmann::json& results() { return results_; }

    /// Writes `<dir>/manifest.json`; missing outputs are listed under "missing".
    std::string write(const std::string& dir, bool ok, const std::string& error = {}) const;

private:
    std::string command_;
    nlohmann::json config_;
    std::uint64_t config_hash_ = 0;
    std::uint64_t seed_ = 0;
    std::string stage_ = "start";
    std::vector<std::string> outputs_;
    nlohmann::json checkpoints_ = nlohmann::json::object();
    nlohmann::json results_ = nlohmann::json::object();
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace onrw::cli
