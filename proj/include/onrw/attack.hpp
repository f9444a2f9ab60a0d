#pragma once

// Differentiable simulated attack layer used while embedding and while
// training the decoder.

#include "onrw/autograd.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace onrw::attack {

enum class Kind { identity, crop, rotate, resize, brightness, jpeg };

std::string kind_name(Kind k);
Kind parse_kind(const std::string& s);
const std::vector<Kind>& all_kinds();

struct AttackSpec {
    Kind kind = Kind::identity;
    float intensity = 1.0f;  // crop/resize area ratio, degrees, brightness factor or JPEG quality
    std::uint64_t seed = 0;  // placement for crops

    void validate() const;
    nlohmann::json to_json() const;
};

/// A kind with an intensity range; a draw is uniform in [lo, hi].
struct AttackTemplate {
    Kind kind = Kind::identity;
    float lo = 1.0f;
    float hi = 1.0f;
};

struct AttackPool {
    std::vector<AttackTemplate> specs;
    std::vector<double> weights;

    /// Uniform pool over all six kinds with the default training ranges.
    static AttackPool defaults();
    static AttackPool identity_only();
    void validate() const;
    nlohmann::json to_json() const;
    static AttackPool from_json(const nlohmann::json& j);
};

struct JpegOptions {
    bool subsample_chroma = true;
    /// When false the quantizer is left unrounded, giving the smooth surrogate
    /// whose derivative the straight-through estimator reports.
    bool round = true;
};

/// YCbCr, 8x8 block DCT, quantization by scaled standard tables with
/// straight-through rounding, then the inverse path.
ag::Var differentiable_jpeg(ag::Var image, float quality, const JpegOptions& opt = {});

ag::Var apply(const AttackSpec& spec, ag::Var image, const JpegOptions& jpeg = {});
Tensor apply(const AttackSpec& spec, const Tensor& image, const JpegOptions& jpeg = {});

AttackSpec sample_spec(const AttackPool& pool, std::uint64_t seed);

struct Sampled {
    ag::Var image;
    AttackSpec spec;
};
Sampled sample_and_apply(const AttackPool& pool, ag::Var image, std::uint64_t seed, const JpegOptions& jpeg = {});

}  // namespace onrw::attack
