#include "onrw/pipeline.hpp"

#include "onrw/dwtdct.hpp"

#include <cstdio>
#include <filesystem>

namespace onrw::cli {

std::string resolve(const RunConfig& cfg, const std::string& path)
{
    const std::filesystem::path p(path);
    if (p.is_absolute()) return path;
    return (std::filesystem::path(cfg.output_root()) / p).string();
}

void apply_whitening(const RunConfig& cfg, codec::Decoder& decoder)
{
    if (!cfg.whitening.enabled) {
        decoder.clear_whitening();
        return;
    }
    const data::Dataset clean = data::make_toy_dataset(cfg.whitening.count, decoder.config().resolution, cfg.whitening.seed);
    codec::fit_whitening(decoder, clean.images);
}

embed::EmbedConfig embed_config(const RunConfig& cfg, const codec::BitMessage& message, std::uint64_t seed)
{
    embed::EmbedConfig e = cfg.embed;
    e.message = message;
    e.seed = seed;
    return e;
}

eval::Method onrw_method(const diffusion::Sampler& sampler, const codec::Decoder& decoder, const RunConfig& cfg,
                         const std::string& name)
{
    eval::Method m;
    m.name = name;
    m.embed = [&sampler, &decoder, cfg](const eval::BenchImage& img, const codec::BitMessage& msg, std::uint64_t seed) {
        const embed::EmbedConfig e = embed_config(cfg, msg, seed);
        return embed::embed(sampler, img.image, sampler.model().condition(img.label), decoder, e).watermarked;
    };
    m.extract = [&decoder](const Tensor& img, int) { return decoder.decode(img).bits.at(0); };
    return m;
}

eval::Method dwtdct_method()
{
    eval::Method m;
    m.name = "DwtDct";
    m.embed = [](const eval::BenchImage& img, const codec::BitMessage& msg, std::uint64_t) { return eval::dwtdct_embed(img.image, msg); };
    m.extract = [](const Tensor& img, int k) { return eval::dwtdct_extract(img, k); };
    return m;
}

std::vector<eval::ExtraAttack> removal_attacks(const diffusion::Sampler& sampler, const std::vector<double>& strengths,
                                               const eval::Autoencoder* ae)
{
    std::vector<eval::ExtraAttack> out;
    for (double t : strengths) {
        char name[32];
        std::snprintf(name, sizeof name, "Regen_%.2f", t);
        out.push_back({"regeneration", name, t,
                       [&sampler, t](const Tensor& img, std::uint64_t seed) { return eval::regeneration_attack(sampler, img, t, seed); }});
    }
    if (ae)
        for (int level = 1; level <= ae->config().levels_count(); ++level)
            out.push_back({"autoencoder", "AE_" + std::to_string(level), static_cast<double>(level),
                           [ae, level](const Tensor& img, std::uint64_t) { return eval::autoencoder_attack(*ae, img, level); }});
    return out;
}

}  // namespace onrw::cli
