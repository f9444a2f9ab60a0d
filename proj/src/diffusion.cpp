#include "onrw/diffusion.hpp"

#include "onrw/archive.hpp"
#include "onrw/ops.hpp"
#include "onrw/rng.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace onrw::diffusion {

using ag::Var;
using json = nlohmann::json;

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end)
{
    if (steps < 1) throw std::invalid_argument("NoiseSchedule: need at least one step");
    NoiseSchedule s;
    s.num_train_steps = steps;
    s.betas.resize(steps);
    s.alphas_cumprod.resize(steps);
    double run = 1.0;
    for (int i = 0; i < steps; ++i) {
        s.betas[i] = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * i / (steps - 1);
        run *= 1.0 - s.betas[i];
        s.alphas_cumprod[i] = run;
    }
    s.validate();
    return s;
}

void NoiseSchedule::validate() const
{
    if (num_train_steps < 1 || static_cast<int>(betas.size()) != num_train_steps ||
        static_cast<int>(alphas_cumprod.size()) != num_train_steps)
        throw std::invalid_argument("NoiseSchedule: inconsistent lengths");
    double run = 1.0;
    for (int i = 0; i < num_train_steps; ++i) {
        if (!(betas[i] > 0.0 && betas[i] < 1.0)) throw std::invalid_argument("NoiseSchedule: beta outside (0,1)");
        run *= 1.0 - betas[i];
        if (std::fabs(alphas_cumprod[i] - run) > 1e-6 * run) throw std::invalid_argument("NoiseSchedule: abar is not the running product");
        if (i > 0 && !(alphas_cumprod[i] < alphas_cumprod[i - 1]))
            throw std::invalid_argument("NoiseSchedule: abar not strictly decreasing");
    }
}

json ModelConfig::to_json() const
{
    return {{"resolution", resolution}, {"patch", patch},         {"ch1", ch1},
            {"ch2", ch2},               {"groups", groups},       {"attn_dim", attn_dim},
            {"token_dim", token_dim},   {"tokens_per_class", tokens_per_class},
            {"num_classes", num_classes}, {"time_dim", time_dim}, {"embed_dim", embed_dim},
            {"num_train_steps", num_train_steps}, {"beta_start", beta_start}, {"beta_end", beta_end},
            {"ddim_steps", ddim_steps}};
}

ModelConfig ModelConfig::from_json(const json& j)
{
    ModelConfig c;
    c.resolution = j.at("resolution");
    c.patch = j.at("patch");
    c.ch1 = j.at("ch1");
    c.ch2 = j.at("ch2");
    c.groups = j.at("groups");
    c.attn_dim = j.at("attn_dim");
    c.token_dim = j.at("token_dim");
    c.tokens_per_class = j.at("tokens_per_class");
    c.num_classes = j.at("num_classes");
    c.time_dim = j.at("time_dim");
    c.embed_dim = j.at("embed_dim");
    c.num_train_steps = j.at("num_train_steps");
    c.beta_start = j.at("beta_start");
    c.beta_end = j.at("beta_end");
    c.ddim_steps = j.at("ddim_steps");
    c.validate();
    return c;
}

void ModelConfig::validate() const
{
    auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
    if (resolution != 32 && resolution != 64) fail("resolution must be 32 or 64");
    if (patch < 1 || resolution % (patch * 2)) fail("resolution must be divisible by 2*patch");
    if (ch1 % groups || ch2 % groups) fail("channel counts must be divisible by groups");
    if (time_dim % 2) fail("time_dim must be even");
    if (tokens_per_class < 1 || num_classes < 1 || token_dim < 1 || attn_dim < 1) fail("token and attention sizes must be positive");
    if (ddim_steps < 1 || ddim_steps > num_train_steps) fail("ddim_steps must lie in [1, num_train_steps]");
    if (!(beta_start > 0 && beta_end < 1 && beta_start <= beta_end)) fail("bad beta range");
}

void AttentionBundle::append(const AttentionCapture& cap, int step)
{
    for (const auto& r : cap.records) {
        const Tensor& p = r.probs.value();
        const int nq = p.dim(1), nk = p.dim(2);
        const std::size_t n = static_cast<std::size_t>(nq) * nk;
        for (int b = 0; b < p.dim(0); ++b) {
            if (b != cap.cond_batch && b != cap.null_batch) continue;
            AttentionMap m;
            m.step = step;
            m.layer = r.layer;
            m.conditional = b == cap.cond_batch;
            m.height = r.height;
            m.width = r.width;
            m.probs = Tensor({nq, nk}, std::vector<float>(p.data() + b * n, p.data() + (b + 1) * n));
            (r.self ? self_maps : cross_maps).push_back(std::move(m));
        }
    }
}

float AttentionBundle::max_row_error() const
{
    float worst = 0.0f;
    for (const auto* maps : {&self_maps, &cross_maps})
        for (const auto& m : *maps)
            for (int q = 0; q < m.probs.dim(0); ++q) {
                double s = 0.0;
                for (int k = 0; k < m.probs.dim(1); ++k) s += m.probs[static_cast<std::size_t>(q) * m.probs.dim(1) + k];
                worst = std::max(worst, static_cast<float>(std::fabs(s - 1.0)));
            }
    return worst;
}

void LatentTrajectory::validate(const Shape& image_shape) const
{
    if (states.empty()) throw std::invalid_argument("trajectory has no states");
    if (!null_embeddings.empty() && static_cast<int>(null_embeddings.size()) != steps())
        throw std::invalid_argument("trajectory null embeddings must have one entry per step");
    for (std::size_t k = 0; k < states.size(); ++k) {
        if (states[k].shape() != image_shape)
            throw std::invalid_argument("trajectory state " + std::to_string(k) + " has shape " + shape_str(states[k].shape()));
        if (!states[k].all_finite()) throw std::invalid_argument("trajectory state " + std::to_string(k) + " is not finite");
    }
}

// ---------------------------------------------------------------------------
// network

namespace {

struct Layers {
    const nn::Bound& p;
    const ModelConfig& cfg;
    AttentionCapture* capture;
    int attn_index = 0;

    Var w(const std::string& n) const { return p[n]; }

    Var norm_act(Var x, const std::string& pre) const
    {
        return ag::silu(ag::group_norm(x, w(pre + ".g"), w(pre + ".b"), cfg.groups));
    }

    Var res(Var x, Var temb, const std::string& pre) const
    {
        Var h = ag::conv2d(norm_act(x, pre + ".n1"), w(pre + ".c1.w"), w(pre + ".c1.b"), 1, 1);
        h = ag::add_channel(h, ag::linear(temb, w(pre + ".t.w"), w(pre + ".t.b")));
        h = ag::conv2d(norm_act(h, pre + ".n2"), w(pre + ".c2.w"), w(pre + ".c2.b"), 1, 1);
        return ag::add(x, h);
    }

    // Single-head attention from spatial queries to `context` keys [B, K, D]
    // (or to the feature map itself when context is invalid).
    Var attend(Var x, Var context, const std::string& pre)
    {
        const int hgt = x.dim(2), wid = x.dim(3);
        Var tokens = ag::to_tokens(ag::group_norm(x, w(pre + ".n.g"), w(pre + ".n.b"), cfg.groups));
        const bool self = !context.valid();
        Var src = self ? tokens : context;
        Var q = ag::linear(tokens, w(pre + ".q"), Var());
        Var k = ag::linear(src, w(pre + ".k"), Var());
        Var v = ag::linear(src, w(pre + ".v"), Var());
        Var logits = ag::scale(ag::bmm(q, k, false, true), 1.0f / std::sqrt(static_cast<float>(cfg.attn_dim)));
        Var probs = ag::softmax_lastdim(logits);
        if (capture) capture->records.push_back({attn_index, self, hgt, wid, probs});
        ++attn_index;
        Var out = ag::linear(ag::bmm(probs, v, false, false), w(pre + ".o.w"), w(pre + ".o.b"));
        return ag::add(x, ag::from_tokens(out, hgt, wid));
    }
};

Tensor timestep_features(const std::vector<int>& taus, int dim)
{
    const int half = dim / 2;
    Tensor t({static_cast<int>(taus.size()), dim});
    for (std::size_t b = 0; b < taus.size(); ++b)
        for (int i = 0; i < half; ++i) {
            const double f = std::exp(-std::log(10000.0) * i / half);
            t[b * dim + i] = static_cast<float>(std::sin(taus[b] * f));
            t[b * dim + half + i] = static_cast<float>(std::cos(taus[b] * f));
        }
    return t;
}

nn::Bound frozen(ag::Graph& g, const DiffusionModel& m)
{
    return nn::Bound(g, const_cast<nn::ParameterStore&>(m.params()), false);
}

Var as_context(Var tokens, const ModelConfig& cfg)
{
    return ag::reshape(tokens, {1, cfg.tokens_per_class, cfg.token_dim});
}

}  // namespace

DiffusionModel::DiffusionModel(ModelConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed)
{
    cfg_.validate();
    schedule_ = NoiseSchedule::linear(cfg_.num_train_steps, cfg_.beta_start, cfg_.beta_end);
    Rng rng(derive_seed(seed, "diffusion-init"));
    init_parameters(rng);
}

void DiffusionModel::init_parameters(Rng& rng)
{
    const int pc = 3 * cfg_.patch * cfg_.patch, c1 = cfg_.ch1, c2 = cfg_.ch2, e = cfg_.embed_dim, a = cfg_.attn_dim,
              d = cfg_.token_dim;
    auto conv = [&](const std::string& n, int co, int ci, int k, float gain) {
        params_.add(n + ".w", nn::he_normal(rng, {co, ci, k, k}, ci * k * k, gain));
        params_.add(n + ".b", Tensor({co}, 0.0f));
    };
    auto lin = [&](const std::string& n, int co, int ci, float gain, bool bias) {
        params_.add(bias ? n + ".w" : n, nn::he_normal(rng, {co, ci}, ci, gain));
        if (bias) params_.add(n + ".b", Tensor({co}, 0.0f));
    };
    auto norm = [&](const std::string& n, int c) {
        params_.add(n + ".g", Tensor({c}, 1.0f));
        params_.add(n + ".b", Tensor({c}, 0.0f));
    };
    auto res = [&](const std::string& n, int c) {
        norm(n + ".n1", c);
        conv(n + ".c1", c, c, 3, 1.0f);
        lin(n + ".t", c, e, 0.5f, true);
        norm(n + ".n2", c);
        conv(n + ".c2", c, c, 3, 0.2f);
    };
    auto attn = [&](const std::string& n, int c, int kdim) {
        norm(n + ".n", c);
        lin(n + ".q", a, c, 0.7f, false);
        lin(n + ".k", a, kdim, 0.7f, false);
        lin(n + ".v", a, kdim, 0.7f, false);
        lin(n + ".o", c, a, 0.2f, true);
    };
    conv("in", c1, pc, 1, 1.0f);
    lin("t1", e, cfg_.time_dim, 1.0f, true);
    lin("t2", e, e, 1.0f, true);
    res("d1", c1);
    attn("x1", c1, d);
    conv("down", c2, c1, 3, 1.0f);
    res("m1", c2);
    attn("s1", c2, c2);
    attn("x2", c2, d);
    res("m2", c2);
    conv("up", c1, c2, 3, 1.0f);
    conv("merge", c1, 2 * c1, 1, 1.0f);
    res("u1", c1);
    attn("x3", c1, d);
    norm("out.n", c1);
    conv("out", pc, c1, 1, 0.1f);
    // Pixel-resolution skip scaled per timestep: lets the prediction carry
    // detail finer than the patch embedding can hold.
    Tensor skip({3, 3, 3, 3}, 0.0f);
    for (int c = 0; c < 3; ++c) skip.at(c, c, 1, 1) = 1.0f;
    params_.add("skip.w", std::move(skip));
    params_.add("skip.b", Tensor({3}, 0.0f));
    params_.add("gate.w", Tensor({3, e}, 0.0f));
    params_.add("gate.b", Tensor({3}, 0.0f));
    Tensor tokens = rng.normal_tensor({cfg_.num_classes, cfg_.tokens_per_class, d});
    params_.add("cond_tokens", std::move(tokens));
    params_.add("null_tokens", rng.normal_tensor({cfg_.tokens_per_class, d}));
    params_.add("anchor", rng.normal_tensor({1, d}));
}

ConditionEmbedding DiffusionModel::condition(int label) const
{
    if (label < 0 || label >= cfg_.num_classes) throw std::out_of_range("condition: label " + std::to_string(label));
    const Tensor& all = params_.get("cond_tokens").value;
    const std::size_t n = static_cast<std::size_t>(cfg_.tokens_per_class) * cfg_.token_dim;
    return {Tensor({cfg_.tokens_per_class, cfg_.token_dim}, std::vector<float>(all.data() + label * n, all.data() + (label + 1) * n)),
            false};
}

ConditionEmbedding DiffusionModel::null_embedding() const
{
    return {params_.get("null_tokens").value, true};
}

Var DiffusionModel::predict_noise(const nn::Bound& p, Var x, const std::vector<int>& taus, Var context,
                                  AttentionCapture* capture) const
{
    const int batch = x.dim(0);
    if (x.shape() != image_shape(batch))
        throw std::invalid_argument("predict_noise: input " + shape_str(x.shape()) + " does not match model resolution " +
                                    std::to_string(cfg_.resolution));
    if (static_cast<int>(taus.size()) != batch) throw std::invalid_argument("predict_noise: one timestep per sample required");
    for (int t : taus)
        if (t < 0 || t >= cfg_.num_train_steps) throw std::out_of_range("predict_noise: timestep " + std::to_string(t));
    if (context.shape() != Shape{batch, cfg_.tokens_per_class, cfg_.token_dim})
        throw std::invalid_argument("predict_noise: context shape " + shape_str(context.shape()));

    ag::Graph& g = x.graph();
    Layers L{p, cfg_, capture};
    Var anchor = ag::repeat_batch(ag::reshape(p["anchor"], {1, 1, cfg_.token_dim}), batch);
    Var keys = ag::concat_axis({anchor, context}, 1);

    Var temb = ag::linear(g.constant(timestep_features(taus, cfg_.time_dim)), p["t1.w"], p["t1.b"]);
    temb = ag::linear(ag::silu(temb), p["t2.w"], p["t2.b"]);

    Var h = ag::conv2d(ag::patchify(x, cfg_.patch), p["in.w"], p["in.b"], 1, 0);
    Var h1 = L.res(h, temb, "d1");
    h1 = L.attend(h1, keys, "x1");
    Var h2 = ag::conv2d(h1, p["down.w"], p["down.b"], 2, 1);
    h2 = L.res(h2, temb, "m1");
    h2 = L.attend(h2, Var(), "s1");
    h2 = L.attend(h2, keys, "x2");
    h2 = L.res(h2, temb, "m2");
    Var u = ag::conv2d(ag::upsample_nearest(h2, 2), p["up.w"], p["up.b"], 1, 1);
    u = ag::conv2d(ag::concat_channels(u, h1), p["merge.w"], p["merge.b"], 1, 0);
    u = L.res(u, temb, "u1");
    u = L.attend(u, keys, "x3");
    Var out = ag::unpatchify(ag::conv2d(L.norm_act(u, "out.n"), p["out.w"], p["out.b"], 1, 0), cfg_.patch);
    Var gate = ag::expand_spatial(ag::linear(ag::silu(temb), p["gate.w"], p["gate.b"]), cfg_.resolution, cfg_.resolution);
    return ag::add(out, ag::mul(gate, ag::conv2d(x, p["skip.w"], p["skip.b"], 1, 1)));
}

void DiffusionModel::save(const std::string& path, const json& extra) const
{
    Archive a;
    a.meta = {{"kind", "onrw-diffusion"}, {"config", cfg_.to_json()}, {"seed", seed_}, {"extra", extra}};
    params_.save_into(a, "p/");
    Tensor abar({cfg_.num_train_steps});
    for (int i = 0; i < cfg_.num_train_steps; ++i) abar[i] = static_cast<float>(schedule_.alphas_cumprod[i]);
    a.put("schedule/alphas_cumprod", std::move(abar));
    a.save(path);
}

DiffusionModel DiffusionModel::load(const std::string& path, json* meta)
{
    const Archive a = Archive::load(path);
    if (a.meta.value("kind", "") != "onrw-diffusion") throw std::runtime_error(path + " is not a diffusion checkpoint");
    DiffusionModel m(ModelConfig::from_json(a.meta.at("config")), a.meta.at("seed").get<std::uint64_t>());
    m.params_.load_from(a, "p/");
    if (meta) *meta = a.meta;
    return m;
}

// ---------------------------------------------------------------------------
// sampling

Var gather_context(const nn::Bound& p, const ModelConfig& cfg, const std::vector<int>& labels)
{
    std::vector<Var> parts;
    parts.reserve(labels.size());
    for (int l : labels) {
        Var tok = l < 0 ? p["null_tokens"] : ag::slice_axis(p["cond_tokens"], 0, l, 1);
        parts.push_back(ag::reshape(tok, {1, cfg.tokens_per_class, cfg.token_dim}));
    }
    return ag::concat_axis(parts, 0);
}

Sampler::Sampler(const DiffusionModel& model, int steps)
    : model_(&model), steps_(steps < 0 ? model.config().ddim_steps : steps)
{
    if (steps_ < 0 || steps_ > model.config().num_train_steps) throw std::invalid_argument("Sampler: bad step count");
    stride_ = steps_ == 0 ? 1 : model.config().num_train_steps / steps_;
}

int Sampler::timestep(int k) const
{
    if (k < 1 || k > steps_) throw std::out_of_range("DDIM step " + std::to_string(k) + " outside [1, " + std::to_string(steps_) + "]");
    return (k - 1) * stride_;
}

double Sampler::alpha_bar_state(int k) const
{
    return k == 0 ? 1.0 : model_->schedule().alpha_bar(timestep(k));
}

void Sampler::check_image(const Tensor& x) const
{
    if (x.shape() != model_->image_shape())
        throw std::invalid_argument("image shape " + shape_str(x.shape()) + " does not match model shape " +
                                    shape_str(model_->image_shape()));
}

Var Sampler::guided_noise(const nn::Bound& p, Var x, int k, Var cond_tokens, Var null_tokens, float guidance,
                          AttentionCapture* capture) const
{
    if (guidance < 0.0f) throw std::invalid_argument("guidance must be non-negative");
    const ModelConfig& cfg = model_->config();
    const int tau = timestep(k);
    if (guidance == 0.0f || guidance == 1.0f) {
        const bool cond = guidance == 1.0f;
        if (capture) {
            capture->cond_batch = cond ? 0 : -1;
            capture->null_batch = cond ? -1 : 0;
        }
        return model_->predict_noise(p, x, {tau}, as_context(cond ? cond_tokens : null_tokens, cfg), capture);
    }
    if (capture) {
        capture->null_batch = 0;
        capture->cond_batch = 1;
    }
    Var ctx = ag::concat_axis({as_context(null_tokens, cfg), as_context(cond_tokens, cfg)}, 0);
    Var eps = model_->predict_noise(p, ag::repeat_batch(x, 2), {tau, tau}, ctx, capture);
    Var e_null = ag::slice_batch(eps, 0, 1);
    Var e_cond = ag::slice_batch(eps, 1, 1);
    return ag::add(e_null, ag::scale(ag::sub(e_cond, e_null), guidance));
}

Var Sampler::ddim_step(Var x, Var eps, int k) const
{
    const double a = alpha_bar_state(k), ap = alpha_bar_state(k - 1);
    const double cx = std::sqrt(ap / a);
    const double ce = std::sqrt(1.0 - ap) - std::sqrt(ap * (1.0 - a) / a);
    return ag::add(ag::scale(x, static_cast<float>(cx)), ag::scale(eps, static_cast<float>(ce)));
}

Var Sampler::inversion_step(Var x_prev, Var eps, int k) const
{
    const double a = alpha_bar_state(k), ap = alpha_bar_state(k - 1);
    const double cx = std::sqrt(a / ap);
    const double ce = std::sqrt(1.0 - a) - std::sqrt(a * (1.0 - ap) / ap);
    return ag::add(ag::scale(x_prev, static_cast<float>(cx)), ag::scale(eps, static_cast<float>(ce)));
}

Sampler::StepResult Sampler::denoise_step(const Tensor& x_t, int k, const ConditionEmbedding& cond,
                                          const ConditionEmbedding& null, float guidance, bool capture_attention) const
{
    check_image(x_t);
    ag::Graph g;
    nn::Bound p = frozen(g, *model_);
    AttentionCapture cap;
    Var x = g.constant(x_t);
    Var eps = guided_noise(p, x, k, g.constant(cond.tokens), g.constant(null.tokens), guidance,
                           capture_attention ? &cap : nullptr);
    StepResult r;
    r.output.predicted_noise = eps.value();
    if (capture_attention) {
        r.output.attention.emplace();
        r.output.attention->append(cap, k);
    }
    r.x_prev = ddim_step(x, eps, k).value();
    return r;
}

LatentTrajectory Sampler::denoise_trajectory(const Tensor& x_T, const ConditionEmbedding& cond,
                                             const std::vector<ConditionEmbedding>& null_schedule, float guidance,
                                             bool capture_attention) const
{
    if (null_schedule.size() != 1 && static_cast<int>(null_schedule.size()) != steps_)
        throw std::invalid_argument("denoise_trajectory: null schedule needs 1 or " + std::to_string(steps_) + " entries, got " +
                                    std::to_string(null_schedule.size()));
    check_image(x_T);
    LatentTrajectory traj;
    traj.states.assign(steps_ + 1, Tensor());
    traj.states[steps_] = x_T;
    traj.guidance = guidance;
    traj.cond = cond;
    if (capture_attention) traj.attention.emplace();
    for (int k = steps_; k >= 1; --k) {
        const ConditionEmbedding& nul = null_schedule.size() == 1 ? null_schedule[0] : null_schedule[k - 1];
        StepResult r = denoise_step(traj.states[k], k, cond, nul, guidance, capture_attention);
        if (capture_attention) {
            auto& dst = *traj.attention;
            for (auto& m : r.output.attention->self_maps) dst.self_maps.push_back(std::move(m));
            for (auto& m : r.output.attention->cross_maps) dst.cross_maps.push_back(std::move(m));
        }
        traj.states[k - 1] = std::move(r.x_prev);
    }
    traj.null_embeddings.reserve(steps_);
    for (int k = 1; k <= steps_; ++k) traj.null_embeddings.push_back(null_schedule.size() == 1 ? null_schedule[0] : null_schedule[k - 1]);
    return traj;
}

Tensor add_noise(const Sampler& sampler, const Tensor& x0, int k, const Tensor& z)
{
    if (!x0.same_shape(z)) throw std::invalid_argument("add_noise: shape mismatch");
    const float a = static_cast<float>(std::sqrt(sampler.alpha_bar_state(k)));
    const float s = static_cast<float>(std::sqrt(1.0 - sampler.alpha_bar_state(k)));
    Tensor out = x0;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * z[i];
    return out;
}

// ---------------------------------------------------------------------------
// training

json TrainConfig::to_json() const
{
    return {{"steps", steps}, {"batch", batch}, {"lr", lr}, {"cfg_dropout", cfg_dropout},
            {"grad_clip", grad_clip}, {"eval_batch", eval_batch}, {"log_every", log_every}};
}

json TrainReport::to_json() const
{
    json c = json::array();
    for (const auto& [s, l] : curve) c.push_back({s, l});
    return {{"initial_loss", initial_loss}, {"final_loss", final_loss}, {"curve", c}, {"seconds", seconds}};
}

namespace {

// Noisy batch for a fixed draw of timesteps and noise.
struct NoisyBatch {
    Tensor x_t;
    Tensor noise;
    std::vector<int> taus;
};

NoisyBatch make_noisy(const DiffusionModel& m, const Tensor& x0, Rng& rng)
{
    NoisyBatch nb;
    const int b = x0.dim(0);
    nb.noise = rng.normal_tensor(x0.shape());
    nb.x_t = x0;
    const std::size_t plane = x0.size() / b;
    for (int i = 0; i < b; ++i) {
        const int tau = rng.uniform_int(0, m.config().num_train_steps - 1);
        nb.taus.push_back(tau);
        const float a = static_cast<float>(std::sqrt(m.schedule().alpha_bar(tau)));
        const float s = static_cast<float>(std::sqrt(1.0 - m.schedule().alpha_bar(tau)));
        for (std::size_t j = i * plane; j < (i + 1) * plane; ++j) nb.x_t[j] = a * x0[j] + s * nb.noise[j];
    }
    return nb;
}

}  // namespace

double evaluate_noise_mse(const DiffusionModel& model, const data::Dataset& dataset, int count, std::uint64_t seed)
{
    data::validate(dataset);
    Rng rng(derive_seed(seed, "diffusion-eval"));
    double total = 0.0;
    int seen = 0;
    for (int start = 0; start < count; start += 32) {
        const int n = std::min(32, count - start);
        std::vector<int> idx, labels;
        for (int i = 0; i < n; ++i) {
            idx.push_back((start + i) % static_cast<int>(dataset.size()));
            labels.push_back(dataset.labels[idx.back()]);
        }
        NoisyBatch nb = make_noisy(model, dataset.batch(idx), rng);
        ag::Graph g;
        nn::Bound p = frozen(g, model);
        Var eps = model.predict_noise(p, g.constant(nb.x_t), nb.taus, gather_context(p, model.config(), labels), nullptr);
        for (std::size_t i = 0; i < nb.noise.size(); ++i) {
            const double d = eps.value()[i] - nb.noise[i];
            total += d * d;
        }
        seen += static_cast<int>(nb.noise.size());
    }
    return total / seen;
}

DiffusionModel train_toy_model(const data::Dataset& dataset, const ModelConfig& model_cfg, const TrainConfig& cfg,
                               std::uint64_t seed, TrainReport* report)
{
    data::validate(dataset);
    if (dataset.resolution != model_cfg.resolution)
        throw std::invalid_argument("train_toy_model: dataset resolution " + std::to_string(dataset.resolution) +
                                    " differs from model resolution " + std::to_string(model_cfg.resolution));
    if (cfg.steps < 0 || cfg.batch < 1) throw std::invalid_argument("train_toy_model: bad step or batch count");
    const auto t0 = std::chrono::steady_clock::now();
    DiffusionModel model(model_cfg, derive_seed(seed, "model"));
    TrainReport rep;
    const int eval_n = std::min<int>(cfg.eval_batch, dataset.size());
    rep.initial_loss = evaluate_noise_mse(model, dataset, eval_n, seed);

    nn::AdamW opt({cfg.lr, 0.9f, 0.999f, 1e-8f, 0.0f});
    Rng rng(derive_seed(seed, "diffusion-train"));
    double window = 0.0;
    int window_n = 0;
    for (int step = 0; step < cfg.steps; ++step) {
        std::vector<int> idx, labels;
        for (int i = 0; i < cfg.batch; ++i) {
            idx.push_back(rng.uniform_int(0, static_cast<int>(dataset.size()) - 1));
            labels.push_back(rng.bernoulli(cfg.cfg_dropout) ? -1 : dataset.labels[idx.back()]);
        }
        NoisyBatch nb = make_noisy(model, dataset.batch(idx), rng);

        ag::Graph g;
        nn::Bound p(g, model.params(), true);
        Var eps = model.predict_noise(p, g.constant(nb.x_t), nb.taus, gather_context(p, model.config(), labels), nullptr);
        Var loss = ag::mean(ag::square(ag::sub(eps, g.constant(nb.noise))));
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) throw std::runtime_error("train_toy_model: non-finite loss at step " + std::to_string(step));
        g.backward(loss);
        model.params().zero_grad();
        p.collect_grads();

        double norm2 = 0.0;
        for (const auto& prm : model.params().all())
            for (float v : prm.grad.values()) norm2 += static_cast<double>(v) * v;
        const double norm = std::sqrt(norm2);
        if (cfg.grad_clip > 0 && norm > cfg.grad_clip)
            for (auto& prm : model.params().all())
                for (auto& v : prm.grad.values()) v *= static_cast<float>(cfg.grad_clip / norm);

        const double progress = static_cast<double>(step) / std::max(1, cfg.steps);
        opt.set_lr(static_cast<float>(cfg.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)))));
        opt.step(model.params());

        window += lv;
        ++window_n;
        if (cfg.log_every > 0 && ((step + 1) % cfg.log_every == 0 || step + 1 == cfg.steps)) {
            rep.curve.emplace_back(step + 1, window / window_n);
            window = 0.0;
            window_n = 0;
        }
    }
    rep.final_loss = cfg.steps == 0 ? rep.initial_loss : evaluate_noise_mse(model, dataset, eval_n, seed);
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (report) *report = rep;
    return model;
}

}  // namespace onrw::diffusion
