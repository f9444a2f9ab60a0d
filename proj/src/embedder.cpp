#include "onrw/embedder.hpp"

#include "onrw/image.hpp"
#include "onrw/ops.hpp"
#include "onrw/rng.hpp"
#include "onrw/warp.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

namespace onrw::embed {

using ag::Var;
using json = nlohmann::json;

std::string mask_mode_name(MaskMode m)
{
    switch (m) {
    case MaskMode::none: return "none";
    case MaskMode::soft: return "soft";
    case MaskMode::hard: return "hard";
    }
    return "?";
}

MaskMode parse_mask_mode(const std::string& s)
{
    for (MaskMode m : {MaskMode::none, MaskMode::soft, MaskMode::hard})
        if (mask_mode_name(m) == s) return m;
    throw std::invalid_argument("unknown mask mode '" + s + "' (none|soft|hard)");
}

std::string upsampling_name(Upsampling u) { return u == Upsampling::nearest ? "nearest" : "bilinear"; }

Upsampling parse_upsampling(const std::string& s)
{
    if (s == "nearest") return Upsampling::nearest;
    if (s == "bilinear") return Upsampling::bilinear;
    throw std::invalid_argument("unknown upsampling '" + s + "' (nearest|bilinear)");
}

json PseudoMask::stats() const
{
    double mean = 0.0, fg = 0.0;
    for (float v : soft.values()) mean += v;
    if (hard)
        for (float v : hard->values()) fg += v;
    const double n = static_cast<double>(soft.size());
    json j = {{"upsampling", upsampling_name(upsampling)}, {"soft_mean", n > 0 ? mean / n : 0.0}, {"hard", hard.has_value()}};
    if (hard) j["hard_fraction"] = fg / n;
    return j;
}

PseudoMask constant_mask(int height, int width, float value)
{
    PseudoMask m;
    m.source = Tensor({1, 1}, value);
    m.soft = Tensor({height, width}, value);
    return m;
}

namespace {

Tensor upsample_nearest_map(const Tensor& p, int height, int width)
{
    const int h = p.dim(0), w = p.dim(1);
    if (height % h != 0 || width % w != 0)
        throw std::invalid_argument("nearest upsampling needs an integer factor, " + shape_str(p.shape()) + " -> " +
                                    std::to_string(height) + "x" + std::to_string(width));
    const int fy = height / h, fx = width / w;
    Tensor out({height, width});
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) out[static_cast<std::size_t>(y) * width + x] = p[static_cast<std::size_t>(y / fy) * w + x / fx];
    return out;
}

}  // namespace

Tensor upsample_normalized(const Tensor& p, int height, int width, Upsampling mode)
{
    if (p.rank() != 2) throw std::invalid_argument("upsample_normalized expects [h,w], got " + shape_str(p.shape()));
    Tensor up;
    if (mode == Upsampling::nearest) {
        up = upsample_nearest_map(p, height, width);
    } else {
        const Tensor planar = warp::apply(*warp::resize_map(p.dim(0), p.dim(1), height, width), p.reshaped({1, 1, p.dim(0), p.dim(1)}));
        up = planar.reshaped({height, width});
    }
    float mx = 0.0f;
    for (float v : up.values()) mx = std::max(mx, v);
    if (!(mx > 0.0f)) throw std::runtime_error("pseudo mask: attention map has no positive mass");
    // Bilinear taps never land exactly on the source peak, so normalise after
    // resizing to keep max(M_soft) = 1.
    for (auto& v : up.values()) v = std::clamp(v / mx, 0.0f, 1.0f);
    return up;
}

Tensor harden(const Tensor& soft)
{
    Tensor h = soft;
    for (auto& v : h.values()) v = v > 0.5f ? 1.0f : 0.0f;
    return h;
}

PseudoMask compute_pseudo_mask(const AttentionBundle& bundle, int height, int width, Upsampling mode, bool hard)
{
    int fine_h = 0, fine_w = 0;
    for (const auto& m : bundle.cross_maps)
        if (m.conditional && m.height >= fine_h) {
            fine_h = m.height;
            fine_w = m.width;
        }
    if (fine_h == 0) throw std::invalid_argument("pseudo mask: no conditional cross-attention maps were captured");

    Tensor p({fine_h, fine_w}, 0.0f);
    int count = 0;
    for (const auto& m : bundle.cross_maps) {
        if (!m.conditional) continue;
        const int nq = m.probs.dim(0), nk = m.probs.dim(1);
        if (nq != m.height * m.width) throw std::invalid_argument("pseudo mask: map query count differs from its grid");
        if (fine_h % m.height != 0 || fine_w % m.width != 0) throw std::invalid_argument("pseudo mask: grids are not nested");
        Tensor mass({m.height, m.width});
        for (int q = 0; q < nq; ++q) {
            double s = 0.0;
            for (int k = 1; k < nk; ++k) s += m.probs[static_cast<std::size_t>(q) * nk + k];  // key 0 is the anchor
            mass[q] = static_cast<float>(s);
        }
        const Tensor up = m.height == fine_h ? mass : upsample_nearest_map(mass, fine_h, fine_w);
        for (std::size_t i = 0; i < p.size(); ++i) p[i] += up[i];
        ++count;
    }
    for (auto& v : p.values()) v /= static_cast<float>(count);

    PseudoMask out;
    out.source = p;
    out.upsampling = mode;
    out.soft = upsample_normalized(p, height, width, mode);
    if (hard) out.hard = harden(out.soft);
    return out;
}

PseudoMask compute_pseudo_mask(const LatentTrajectory& traj, int height, int width, Upsampling mode, bool hard)
{
    if (!traj.attention) throw std::invalid_argument("pseudo mask: trajectory carries no attention capture");
    return compute_pseudo_mask(*traj.attention, height, width, mode, hard);
}

Var loss_decode(Var image, const codec::Decoder& decoder, const codec::BitMessage& message)
{
    if (message.size() != decoder.config().k)
        throw std::invalid_argument("loss_decode: message has " + std::to_string(message.size()) + " bits, decoder expects " +
                                    std::to_string(decoder.config().k));
    return codec::decode_loss(decoder.logits(image.graph(), image), {message});
}

Var loss_self_attention(const std::vector<Var>& current, const std::vector<Tensor>& fixed)
{
    if (current.size() != fixed.size())
        throw std::invalid_argument("loss_self_attention: " + std::to_string(current.size()) + " maps vs " + std::to_string(fixed.size()));
    if (current.empty()) throw std::invalid_argument("loss_self_attention: no maps");
    Var total;
    for (std::size_t i = 0; i < current.size(); ++i) {
        if (current[i].shape() != fixed[i].shape())
            throw std::invalid_argument("loss_self_attention: map " + std::to_string(i) + " shape mismatch");
        Var term = ag::sum_squares(ag::sub(current[i], current[i].graph().constant(fixed[i])));
        total = total.valid() ? ag::add(total, term) : term;
    }
    return total;
}

double loss_self_attention(const AttentionBundle& current, const AttentionBundle& fixed)
{
    if (current.self_maps.size() != fixed.self_maps.size()) throw std::invalid_argument("loss_self_attention: map count mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < current.self_maps.size(); ++i) {
        const auto& a = current.self_maps[i];
        const auto& b = fixed.self_maps[i];
        if (a.step != b.step || a.layer != b.layer || a.conditional != b.conditional || a.probs.shape() != b.probs.shape())
            throw std::invalid_argument("loss_self_attention: structure mismatch at map " + std::to_string(i));
        for (std::size_t j = 0; j < a.probs.size(); ++j) {
            const double d = static_cast<double>(a.probs[j]) - b.probs[j];
            s += d * d;
        }
    }
    return s;
}

MaskedMse loss_mse_masked(Var x0_prime, const Tensor& x0, const Tensor* mask)
{
    if (x0_prime.shape() != x0.shape())
        throw std::invalid_argument("loss_mse_masked: " + shape_str(x0_prime.shape()) + " vs " + shape_str(x0.shape()));
    ag::Graph& g = x0_prime.graph();
    MaskedMse r;
    if (!mask) {
        r.blended = x0_prime;
    } else {
        if (mask->shape() != Shape{x0.dim(2), x0.dim(3)}) throw std::invalid_argument("loss_mse_masked: mask shape " + shape_str(mask->shape()));
        Tensor keep = x0;
        const std::size_t plane = mask->size();
        for (std::size_t i = 0; i < keep.size(); ++i) keep[i] *= 1.0f - (*mask)[i % plane];
        r.blended = ag::add(ag::mul_spatial_const(x0_prime, *mask), g.constant(keep));
    }
    r.loss = ag::l2_norm(ag::sub(r.blended, g.constant(x0)));
    return r;
}

void EmbedConfig::validate() const
{
    auto fail = [](const std::string& m) { throw std::invalid_argument("embed config: " + m); };
    if (!(alpha >= 0 && beta >= 0 && gamma >= 0)) fail("loss weights must be non-negative");
    if (iterations < 0) fail("iterations must be non-negative");
    if (!(lr >= 0) || !std::isfinite(lr)) fail("lr must be finite and non-negative");
    if (!(guidance >= 0)) fail("guidance must be non-negative");
    if (message.size() < 1) fail("message is empty");
    attack_pool.validate();
}

json EmbedConfig::to_json() const
{
    return {{"alpha", alpha},
            {"beta", beta},
            {"gamma", gamma},
            {"iterations", iterations},
            {"lr", lr},
            {"mask_mode", mask_mode_name(mask_mode)},
            {"upsampling", upsampling_name(upsampling)},
            {"guidance", guidance},
            {"message", message.str()},
            {"attack_pool", attack_pool.to_json()},
            {"null_text", {{"inner_iters", null_text.inner_iters}, {"lr", null_text.lr}}},
            {"seed", seed}};
}

json EmbedResult::to_json() const
{
    json hist = json::array();
    for (const auto& r : loss_history)
        hist.push_back({{"decode", r.decode}, {"self_attention", r.self_attention}, {"mse", r.mse}, {"total", r.total},
                        {"attack", r.attack.to_json()}});
    return {{"clean_bit_accuracy", clean_bit_accuracy}, {"failed", failed}, {"seconds", seconds}, {"mask", mask.stats()},
            {"loss_history", hist}};
}

namespace {

nn::Bound frozen(ag::Graph& g, const diffusion::DiffusionModel& m)
{
    return nn::Bound(g, const_cast<nn::ParameterStore&>(m.params()), false);
}

struct Chain {
    Var x0;
    std::vector<Var> self;
    AttentionBundle bundle;
};

// Guided denoise x_T -> x_0 kept in one graph so gradients reach x_T.
Chain run_chain(const Sampler& s, const nn::Bound& p, Var x, const LatentTrajectory& traj, bool keep_bundle)
{
    ag::Graph& g = x.graph();
    Chain c;
    Var cond = g.constant(traj.cond.tokens);
    for (int k = s.steps(); k >= 1; --k) {
        diffusion::AttentionCapture cap;
        Var null = g.constant(traj.null_embeddings[k - 1].tokens);
        Var eps = s.guided_noise(p, x, k, cond, null, traj.guidance, &cap);
        for (const auto& r : cap.records)
            if (r.self) c.self.push_back(r.probs);
        if (keep_bundle) c.bundle.append(cap, k);
        x = s.ddim_step(x, eps, k);
    }
    c.x0 = x;
    return c;
}

}  // namespace

Preparation prepare(const Sampler& sampler, const Tensor& x0, const ConditionEmbedding& cond, float guidance,
                    const inversion::NullTextOptions& null_text)
{
    Preparation prep;
    const LatentTrajectory pivot = inversion::ddim_invert(sampler, x0, cond, 1.0f);
    prep.trajectory = inversion::null_text_optimize(sampler, pivot, cond, guidance, null_text);
    ag::Graph g;
    nn::Bound p = frozen(g, sampler.model());
    Chain c = run_chain(sampler, p, g.constant(prep.trajectory.xT()), prep.trajectory, true);
    for (const Var& v : c.self) prep.fixed_self.push_back(v.value());
    prep.fixed_attention = std::move(c.bundle);
    prep.reconstruction = c.x0.value();
    prep.trajectory.attention = prep.fixed_attention;
    return prep;
}

EmbedResult embed(const Sampler& sampler, const Tensor& x0, const ConditionEmbedding& cond, const codec::Decoder& decoder,
                  const EmbedConfig& cfg)
{
    cfg.validate();
    return embed(sampler, x0, prepare(sampler, x0, cond, cfg.guidance, cfg.null_text), decoder, cfg);
}

EmbedResult embed(const Sampler& sampler, const Tensor& x0, const Preparation& prep, const codec::Decoder& decoder,
                  const EmbedConfig& cfg)
{
    cfg.validate();
    sampler.check_image(x0);
    if (cfg.message.size() != decoder.config().k)
        throw std::invalid_argument("embed: message length " + std::to_string(cfg.message.size()) + " differs from decoder k " +
                                    std::to_string(decoder.config().k));
    if (decoder.config().resolution != x0.dim(2)) throw std::invalid_argument("embed: decoder resolution differs from image");
    if (prep.trajectory.guidance != cfg.guidance) throw std::invalid_argument("embed: preparation was made at another guidance");
    const auto t0 = std::chrono::steady_clock::now();
    const int H = x0.dim(2), W = x0.dim(3);

    EmbedResult res;
    res.reconstruction = prep.reconstruction;
    if (cfg.mask_mode == MaskMode::none)
        res.mask = constant_mask(H, W, 1.0f);
    else
        res.mask = compute_pseudo_mask(prep.fixed_attention, H, W, cfg.upsampling, cfg.mask_mode == MaskMode::hard);
    const Tensor* mask = cfg.mask_mode == MaskMode::none ? nullptr : &res.mask.effective();

    Tensor xt = prep.trajectory.xT();
    nn::AdamW opt({cfg.lr, 0.9f, 0.999f, 1e-8f, 0.0f});
    for (int it = 0; it < cfg.iterations; ++it) {
        ag::Graph g;
        nn::Bound p = frozen(g, sampler.model());
        Var x = g.leaf(xt);
        Chain c = run_chain(sampler, p, x, prep.trajectory, false);
        MaskedMse mm = loss_mse_masked(c.x0, x0, mask);
        attack::Sampled hit = attack::sample_and_apply(cfg.attack_pool, mm.blended, derive_seed(cfg.seed, "embed-attack", it));
        Var l_dec = loss_decode(hit.image, decoder, cfg.message);
        Var l_sa = loss_self_attention(c.self, prep.fixed_self);
        Var total = ag::add(ag::add(ag::scale(l_dec, cfg.alpha), ag::scale(l_sa, cfg.beta)), ag::scale(mm.loss, cfg.gamma));

        LossRecord rec{l_dec.value()[0], l_sa.value()[0], mm.loss.value()[0], total.value()[0], hit.spec};
        if (!std::isfinite(rec.total)) throw std::runtime_error("embed: non-finite loss at iteration " + std::to_string(it));
        res.loss_history.push_back(rec);

        g.backward(total);
        const Tensor& grad = g.grad(x);
        if (!grad.empty()) opt.step(xt, grad);
    }

    ag::Graph g;
    nn::Bound p = frozen(g, sampler.model());
    Chain c = run_chain(sampler, p, g.constant(xt), prep.trajectory, false);
    res.watermarked = image::quantize8(loss_mse_masked(c.x0, x0, mask).blended.value());
    if (mask) {
        // Background pixels keep the original values exactly, quantized or not.
        const std::size_t plane = mask->size();
        for (std::size_t i = 0; i < x0.size(); ++i)
            if ((*mask)[i % plane] == 0.0f) res.watermarked[i] = x0[i];
    }
    res.optimized_noise = xt;
    res.clean_bit_accuracy = codec::bit_accuracy(decoder.decode(res.watermarked).bits[0], cfg.message);
    res.failed = res.clean_bit_accuracy < 0.5;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

}  // namespace onrw::embed
