#include "onrw/removal.hpp"

#include "onrw/archive.hpp"
#include "onrw/image.hpp"
#include "onrw/metrics.hpp"
#include "onrw/ops.hpp"

#include <chrono>
#include <cmath>
#include <stdexcept>

namespace onrw::eval {

using ag::Var;
using json = nlohmann::json;

Tensor regeneration_attack(const diffusion::Sampler& sampler, const Tensor& image, double t_strength, std::uint64_t seed)
{
    if (!(t_strength > 0.0 && t_strength < 1.0)) throw std::invalid_argument("regeneration_attack: strength must lie in (0,1)");
    sampler.check_image(image);
    const int k0 = std::max(1, static_cast<int>(std::ceil(t_strength * sampler.steps() - 1e-9)));
    Rng rng(seed);
    Tensor x = diffusion::add_noise(sampler, image, k0, rng.normal_tensor(image.shape()));
    const diffusion::ConditionEmbedding nul = sampler.model().null_embedding();
    for (int k = k0; k >= 1; --k) x = sampler.denoise_step(x, k, nul, nul, 0.0f, false).x_prev;
    return image::quantize8(x);
}

// ---------------------------------------------------------------------------
// autoencoder

json AutoencoderConfig::to_json() const { return {{"resolution", resolution}, {"width", width}, {"levels", levels}}; }

AutoencoderConfig AutoencoderConfig::from_json(const json& j)
{
    AutoencoderConfig c;
    c.resolution = j.at("resolution").get<int>();
    c.width = j.at("width").get<int>();
    c.levels = j.at("levels").get<std::vector<int>>();
    c.validate();
    return c;
}

void AutoencoderConfig::validate() const
{
    if (resolution < 8 || resolution % 4) throw std::invalid_argument("autoencoder: resolution must be a multiple of 4, >= 8");
    if (width < 4) throw std::invalid_argument("autoencoder: width must be >= 4");
    if (levels.empty()) throw std::invalid_argument("autoencoder: no levels");
    for (std::size_t i = 0; i < levels.size(); ++i)
        if (levels[i] < 1 || (i > 0 && levels[i] <= levels[i - 1]))
            throw std::invalid_argument("autoencoder: levels must be positive and strictly increasing");
}

json AutoencoderTrainConfig::to_json() const
{
    return {{"steps", steps}, {"batch", batch}, {"lr", lr}, {"log_every", log_every}};
}

json AutoencoderTrainReport::to_json() const
{
    json c = json::array();
    for (const auto& [s, l] : curve) c.push_back({s, l});
    return {{"level_psnr", level_psnr}, {"curve", c}, {"seconds", seconds}};
}

Autoencoder::Autoencoder(AutoencoderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg))
{
    cfg_.validate();
    Rng rng(seed);
    const int w = cfg_.width, w2 = 2 * w, z = cfg_.latent_channels();
    auto conv = [&](const std::string& name, int out, int in, int ks, float gain = 1.0f) {
        params_.add(name + ".w", nn::he_normal(rng, {out, in, ks, ks}, in * ks * ks, gain));
        params_.add(name + ".b", Tensor({out}, 0.0f));
    };
    conv("e1", w, 3, 3);
    conv("e2", w, w, 3);
    conv("e3", w2, w, 3);
    conv("e4", z, w2, 1, 0.5f);
    conv("d1", w2, z, 3);
    conv("d2", w, w2, 3);
    conv("d3", w, w, 3);
    conv("d4", 3, w, 3, 0.5f);
}

Var Autoencoder::reconstruct(const nn::Bound& p, Var x, int level) const
{
    if (level < 1 || level > cfg_.levels_count()) throw std::invalid_argument("autoencoder: level out of range");
    auto c = [&](Var v, const std::string& n, int stride, int pad) { return ag::conv2d(v, p[n + ".w"], p[n + ".b"], stride, pad); };
    Var h = ag::silu(c(x, "e1", 1, 1));
    h = ag::silu(c(h, "e2", 2, 1));
    h = ag::silu(c(h, "e3", 2, 1));
    Var z = c(h, "e4", 1, 0);
    Tensor keep({cfg_.latent_channels()}, 0.0f);
    for (int i = 0; i < cfg_.levels[level - 1]; ++i) keep[i] = 1.0f;
    z = ag::mul_channel_const(z, keep);
    h = ag::silu(c(z, "d1", 1, 1));
    h = ag::silu(c(ag::upsample_nearest(h, 2), "d2", 1, 1));
    h = ag::silu(c(ag::upsample_nearest(h, 2), "d3", 1, 1));
    return c(h, "d4", 1, 1);
}

Tensor Autoencoder::round_trip(const Tensor& image, int level) const
{
    if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != cfg_.resolution || image.dim(3) != cfg_.resolution)
        throw std::invalid_argument("autoencoder: image shape does not match the configured resolution");
    ag::Graph g;
    nn::Bound p(g, const_cast<nn::ParameterStore&>(params_), false);
    Tensor out = reconstruct(p, g.constant(image), level).value();
    for (auto& v : out.values()) v = std::clamp(v, -1.0f, 1.0f);
    return image::quantize8(out);
}

void Autoencoder::save(const std::string& path, const json& extra) const
{
    Archive a;
    a.meta = {{"kind", "onrw-autoencoder"}, {"config", cfg_.to_json()}, {"extra", extra}};
    params_.save_into(a, "p/");
    a.save(path);
}

Autoencoder Autoencoder::load(const std::string& path, json* meta)
{
    const Archive a = Archive::load(path);
    if (a.meta.value("kind", "") != "onrw-autoencoder") throw std::runtime_error(path + " is not an autoencoder checkpoint");
    Autoencoder ae(AutoencoderConfig::from_json(a.meta.at("config")), 0);
    ae.params_.load_from(a, "p/");
    if (meta) *meta = a.meta;
    return ae;
}

Autoencoder train_autoencoder(const data::Dataset& train, const data::Dataset& heldout, const AutoencoderConfig& cfg,
                              const AutoencoderTrainConfig& tc, std::uint64_t seed, AutoencoderTrainReport* report)
{
    data::validate(train);
    if (train.resolution != cfg.resolution) throw std::invalid_argument("train_autoencoder: dataset resolution differs");
    if (tc.steps < 0 || tc.batch < 1 || !(tc.lr > 0.0f)) throw std::invalid_argument("train_autoencoder: bad training config");
    const auto t0 = std::chrono::steady_clock::now();
    Autoencoder ae(cfg, derive_seed(seed, "ae-init"));
    nn::AdamW opt({tc.lr, 0.9f, 0.999f, 1e-8f, 0.0f});
    Rng rng(derive_seed(seed, "ae-train"));
    AutoencoderTrainReport rep;
    double window = 0.0;
    int window_n = 0;
    for (int step = 0; step < tc.steps; ++step) {
        std::vector<int> idx;
        for (int i = 0; i < tc.batch; ++i) idx.push_back(rng.uniform_int(0, static_cast<int>(train.size()) - 1));
        const int level = rng.uniform_int(1, cfg.levels_count());
        ag::Graph g;
        nn::Bound p(g, ae.params(), true);
        const Tensor x = train.batch(idx);
        Var loss = ag::mean(ag::square(ag::sub(ae.reconstruct(p, g.constant(x), level), g.constant(x))));
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) throw std::runtime_error("train_autoencoder: non-finite loss at step " + std::to_string(step));
        g.backward(loss);
        ae.params().zero_grad();
        p.collect_grads();
        opt.step(ae.params());
        window += lv;
        ++window_n;
        if (tc.log_every > 0 && ((step + 1) % tc.log_every == 0 || step + 1 == tc.steps)) {
            rep.curve.emplace_back(step + 1, window / window_n);
            window = 0.0;
            window_n = 0;
        }
    }
    for (int level = 1; level <= cfg.levels_count(); ++level) {
        double psnr = 0.0;
        for (const Tensor& img : heldout.images) psnr += quality_metrics(ae.round_trip(img, level), img).psnr;
        rep.level_psnr.push_back(heldout.size() ? psnr / heldout.size() : 0.0);
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (report) *report = rep;
    return ae;
}

Tensor autoencoder_attack(const Autoencoder& ae, const Tensor& image, int level) { return ae.round_trip(image, level); }

}  // namespace onrw::eval
