#include "onrw/codec.hpp"

#include "onrw/archive.hpp"
#include "onrw/hash.hpp"
#include "onrw/ops.hpp"
#include "onrw/rng.hpp"

#include <chrono>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace onrw::codec {

using ag::Var;
using json = nlohmann::json;

std::string BitMessage::str() const
{
    std::string s;
    for (auto b : bits) s.push_back(b ? '1' : '0');
    return s;
}

BitMessage BitMessage::parse(const std::string& s)
{
    BitMessage m;
    for (char c : s) {
        if (c == '0' || c == '1') m.bits.push_back(static_cast<std::uint8_t>(c - '0'));
        else if (!std::isspace(static_cast<unsigned char>(c))) throw std::invalid_argument("bit string may only hold 0 and 1");
    }
    if (m.bits.empty()) throw std::invalid_argument("empty bit string");
    return m;
}

Tensor BitMessage::as_tensor() const
{
    Tensor t({1, size()});
    for (int i = 0; i < size(); ++i) t[i] = bits[i];
    return t;
}

BitMessage sample_message(int k, std::uint64_t seed)
{
    if (k < 1) throw std::invalid_argument("sample_message: k must be >= 1");
    Rng rng(derive_seed(seed, "message"));
    BitMessage m;
    for (int i = 0; i < k; ++i) m.bits.push_back(rng.bernoulli(0.5) ? 1 : 0);
    return m;
}

double bit_accuracy(const BitMessage& predicted, const BitMessage& truth)
{
    if (predicted.size() != truth.size())
        throw std::invalid_argument("bit_accuracy: length " + std::to_string(predicted.size()) + " vs " + std::to_string(truth.size()));
    if (truth.size() == 0) throw std::invalid_argument("bit_accuracy: empty messages");
    int same = 0;
    for (int i = 0; i < truth.size(); ++i) same += predicted.bits[i] == truth.bits[i];
    return static_cast<double>(same) / truth.size();
}

json DecoderConfig::to_json() const
{
    return {{"k", k}, {"resolution", resolution}, {"width", width}, {"groups", groups}};
}

DecoderConfig DecoderConfig::from_json(const json& j)
{
    DecoderConfig c;
    c.k = j.at("k");
    c.resolution = j.at("resolution");
    c.width = j.at("width");
    c.groups = j.at("groups");
    c.validate();
    return c;
}

void DecoderConfig::validate() const
{
    if (k < 1) throw std::invalid_argument("decoder config: k must be >= 1");
    if (resolution != 32 && resolution != 64) throw std::invalid_argument("decoder config: resolution must be 32 or 64");
    if (width < groups || width % groups) throw std::invalid_argument("decoder config: width must be a multiple of groups");
}

namespace {

int down_stages(int resolution) { return resolution == 64 ? 3 : 2; }

}  // namespace

Decoder::Decoder(DecoderConfig cfg, std::uint64_t seed) : cfg_(cfg)
{
    cfg_.validate();
    Rng rng(derive_seed(seed, "decoder-init"));
    auto conv = [&](const std::string& n, int co, int ci, int k) {
        params_.add(n + ".w", nn::he_normal(rng, {co, ci, k, k}, ci * k * k));
        params_.add(n + ".b", Tensor({co}, 0.0f));
    };
    auto norm = [&](const std::string& n, int c) {
        params_.add(n + ".g", Tensor({c}, 1.0f));
        params_.add(n + ".b", Tensor({c}, 0.0f));
    };
    const int w = cfg_.width;
    int ch = 3;
    conv("c0", w, ch, 3);
    norm("n0", w);
    ch = w;
    for (int s = 0; s < down_stages(cfg_.resolution); ++s) {
        const int co = s == 0 ? w : 2 * w;
        conv("d" + std::to_string(s), co, ch, 3);
        norm("dn" + std::to_string(s), co);
        ch = co;
    }
    conv("c1", ch, ch, 3);
    norm("n1", ch);
    conv("head", cfg_.k, ch, 1);
    params_.add("fc.w", nn::he_normal(rng, {cfg_.k, cfg_.k}, cfg_.k, 0.7f));
    params_.add("fc.b", Tensor({cfg_.k}, 0.0f));
}

Var Decoder::logits(const nn::Bound& p, Var image) const
{
    if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != cfg_.resolution || image.dim(3) != cfg_.resolution)
        throw std::invalid_argument("decoder expects [B,3," + std::to_string(cfg_.resolution) + "," + std::to_string(cfg_.resolution) +
                                    "], got " + shape_str(image.shape()));
    auto block = [&](Var x, const std::string& c, const std::string& n, int stride) {
        Var y = ag::conv2d(x, p[c + ".w"], p[c + ".b"], stride, 1);
        return ag::relu(ag::group_norm(y, p[n + ".g"], p[n + ".b"], cfg_.groups));
    };
    Var h = block(image, "c0", "n0", 1);
    for (int s = 0; s < down_stages(cfg_.resolution); ++s) h = block(h, "d" + std::to_string(s), "dn" + std::to_string(s), 2);
    h = block(h, "c1", "n1", 1);
    h = ag::global_avg_pool(ag::conv2d(h, p["head.w"], p["head.b"], 1, 0));
    Var out = ag::linear(h, p["fc.w"], p["fc.b"]);
    if (whiten_) {
        ag::Graph& g = image.graph();
        const int b = out.dim(0);
        Tensor shift({b, cfg_.k}), scale({b, cfg_.k});
        for (int i = 0; i < b; ++i)
            for (int j = 0; j < cfg_.k; ++j) {
                shift[i * cfg_.k + j] = -whiten_->shift[j] * whiten_->scale[j];
                scale[i * cfg_.k + j] = whiten_->scale[j];
            }
        out = ag::add(ag::mul_const(out, scale), g.constant(shift));
    }
    return out;
}

Var Decoder::logits(ag::Graph& g, Var image) const
{
    nn::Bound p(g, const_cast<nn::ParameterStore&>(params_), false);
    return logits(p, image);
}

Decoded Decoder::decode(const Tensor& image) const
{
    ag::Graph g;
    Decoded d;
    d.logits = logits(g, g.constant(image)).value();
    const int b = d.logits.dim(0);
    for (int i = 0; i < b; ++i) {
        BitMessage m;
        for (int j = 0; j < cfg_.k; ++j) m.bits.push_back(d.logits[i * cfg_.k + j] > 0.0f ? 1 : 0);
        d.bits.push_back(std::move(m));
    }
    return d;
}

void Decoder::set_whitening(Tensor shift, Tensor scale)
{
    require_shape(shift, {cfg_.k}, "whitening shift");
    require_shape(scale, {cfg_.k}, "whitening scale");
    for (float s : scale.values())
        if (!(s > 0.0f)) throw std::invalid_argument("whitening scale must be positive");
    whiten_ = Whitening{std::move(shift), std::move(scale)};
}

std::uint64_t Decoder::checksum() const
{
    Fnv1a h;
    const std::uint64_t c = params_.checksum();
    h.update(&c, sizeof c);
    if (whiten_) {
        const std::uint64_t a = whiten_->shift.checksum(), b = whiten_->scale.checksum();
        h.update(&a, sizeof a);
        h.update(&b, sizeof b);
    }
    return h.digest();
}

void Decoder::save(const std::string& path, const json& extra) const
{
    Archive a;
    a.meta = {{"kind", "onrw-decoder"}, {"config", cfg_.to_json()}, {"whitened", whitened()}, {"extra", extra}};
    params_.save_into(a, "p/");
    if (whiten_) {
        a.put("whiten/shift", whiten_->shift);
        a.put("whiten/scale", whiten_->scale);
    }
    a.save(path);
}

Decoder Decoder::load(const std::string& path, json* meta)
{
    const Archive a = Archive::load(path);
    if (a.meta.value("kind", "") != "onrw-decoder") throw std::runtime_error(path + " is not a decoder checkpoint");
    Decoder d(DecoderConfig::from_json(a.meta.at("config")), 0);
    d.params_.load_from(a, "p/");
    if (a.meta.value("whitened", false)) d.set_whitening(a.get("whiten/shift"), a.get("whiten/scale"));
    if (meta) *meta = a.meta;
    return d;
}

void fit_whitening(Decoder& decoder, const std::vector<Tensor>& images)
{
    if (images.size() < 2) throw std::invalid_argument("fit_whitening needs at least two images");
    decoder.clear_whitening();
    const int k = decoder.config().k;
    std::vector<double> s1(k, 0.0), s2(k, 0.0);
    for (const Tensor& img : images) {
        const Tensor l = decoder.decode(img).logits;
        for (int j = 0; j < k; ++j) {
            s1[j] += l[j];
            s2[j] += static_cast<double>(l[j]) * l[j];
        }
    }
    Tensor shift({k}), scale({k});
    const double n = static_cast<double>(images.size());
    for (int j = 0; j < k; ++j) {
        const double mu = s1[j] / n, var = std::max(s2[j] / n - mu * mu, 1e-8);
        shift[j] = static_cast<float>(mu);
        scale[j] = static_cast<float>(1.0 / std::sqrt(var));
    }
    decoder.set_whitening(std::move(shift), std::move(scale));
}

Var decode_loss(Var logits, const std::vector<BitMessage>& messages)
{
    const int b = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(messages.size()) != b) throw std::invalid_argument("decode_loss: one message per batch row required");
    Tensor target({b, k});
    for (int i = 0; i < b; ++i) {
        if (messages[i].size() != k)
            throw std::invalid_argument("decode_loss: message length " + std::to_string(messages[i].size()) + " differs from decoder k " +
                                        std::to_string(k));
        for (int j = 0; j < k; ++j) target[i * k + j] = messages[i].bits[j];
    }
    return ag::sum_squares(ag::sub(ag::sigmoid(logits), logits.graph().constant(std::move(target))));
}

json DecoderTrainConfig::to_json() const
{
    return {{"steps", steps}, {"batch", batch}, {"lr", lr}, {"image_weight", image_weight},
            {"image_weight_ramp", image_weight_ramp}, {"grad_clip", grad_clip}, {"use_attacks", use_attacks}, {"clean_warmup", clean_warmup}, {"pool", pool.to_json()}, {"log_every", log_every}};
}

json DecoderTrainReport::to_json() const
{
    json c = json::array();
    for (const auto& [s, l] : curve) c.push_back({s, l});
    return {{"clean_accuracy", clean_accuracy}, {"attacked_accuracy", attacked_accuracy}, {"residual_psnr", residual_psnr},
            {"curve", c}, {"seconds", seconds}};
}

namespace {

// HiDDeN-style residual encoder working at half resolution; only used to
// give the decoder something to learn from.
class Encoder {
public:
    Encoder(const DecoderConfig& cfg, Rng& rng) : cfg_(cfg)
    {
        const int w = cfg.width;
        auto conv = [&](const std::string& n, int co, int ci, int k, float gain) {
            params_.add(n + ".w", nn::he_normal(rng, {co, ci, k, k}, ci * k * k, gain));
            params_.add(n + ".b", Tensor({co}, 0.0f));
        };
        const int half = cfg.resolution / 2;
        conv("e0", w, 3, 3, 1.0f);
        // Message -> spatial carrier so bits can occupy distinct patterns.
        params_.add("msg.w", nn::he_normal(rng, {kCarrier * half * half, cfg.k}, cfg.k));
        params_.add("msg.b", Tensor({kCarrier * half * half}, 0.0f));
        conv("e1", w, w + kCarrier, 3, 1.0f);
        conv("e2", w, w, 3, 1.0f);
        conv("out", 12, w, 1, 0.1f);
    }

    nn::ParameterStore& params() { return params_; }

    Var residual(const nn::Bound& p, Var image, Var bits_pm) const
    {
        const int half = cfg_.resolution / 2;
        Var h = ag::relu(ag::conv2d(image, p["e0.w"], p["e0.b"], 2, 1));
        Var carrier = ag::reshape(ag::linear(bits_pm, p["msg.w"], p["msg.b"]), {bits_pm.dim(0), kCarrier, half, half});
        h = ag::concat_channels(h, carrier);
        h = ag::relu(ag::conv2d(h, p["e1.w"], p["e1.b"], 1, 1));
        h = ag::relu(ag::conv2d(h, p["e2.w"], p["e2.b"], 1, 1));
        return ag::unpatchify(ag::conv2d(h, p["out.w"], p["out.b"], 1, 0), 2);
    }

private:
    static constexpr int kCarrier = 4;
    DecoderConfig cfg_;
    nn::ParameterStore params_;
};

Tensor pm_bits(const std::vector<BitMessage>& msgs)
{
    const int k = msgs.front().size();
    Tensor t({static_cast<int>(msgs.size()), k});
    for (std::size_t i = 0; i < msgs.size(); ++i)
        for (int j = 0; j < k; ++j) t[i * k + j] = msgs[i].bits[j] ? 1.0f : -1.0f;
    return t;
}

void clip_grads(nn::ParameterStore& s, double max_norm)
{
    double n2 = 0.0;
    for (const auto& p : s.all())
        for (float v : p.grad.values()) n2 += static_cast<double>(v) * v;
    const double n = std::sqrt(n2);
    if (n > max_norm)
        for (auto& p : s.all())
            for (auto& v : p.grad.values()) v *= static_cast<float>(max_norm / n);
}

}  // namespace

Decoder train_decoder(const data::Dataset& train, const data::Dataset& heldout, const DecoderConfig& cfg,
                      const DecoderTrainConfig& tc, std::uint64_t seed, DecoderTrainReport* report)
{
    data::validate(train);
    if (train.resolution != cfg.resolution) throw std::invalid_argument("train_decoder: dataset resolution differs from decoder");
    if (tc.use_attacks) tc.pool.validate();
    const auto t0 = std::chrono::steady_clock::now();
    Decoder dec(cfg, derive_seed(seed, "decoder"));
    Rng init_rng(derive_seed(seed, "encoder-init"));
    Encoder enc(cfg, init_rng);
    nn::AdamW opt_d({tc.lr, 0.9f, 0.999f, 1e-8f, 0.0f});
    nn::AdamW opt_e({tc.lr, 0.9f, 0.999f, 1e-8f, 0.0f});
    Rng rng(derive_seed(seed, "decoder-train"));
    DecoderTrainReport rep;
    double window = 0.0;
    int window_n = 0;

    for (int step = 0; step < tc.steps; ++step) {
        std::vector<int> idx;
        std::vector<BitMessage> msgs;
        for (int i = 0; i < tc.batch; ++i) {
            idx.push_back(rng.uniform_int(0, static_cast<int>(train.size()) - 1));
            msgs.push_back(sample_message(cfg.k, rng.engine()()));
        }
        const double progress = static_cast<double>(step) / std::max(1, tc.steps - 1);
        const float lr = static_cast<float>(tc.lr * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress))));
        opt_d.set_lr(lr);
        opt_e.set_lr(lr);
        ag::Graph g;
        nn::Bound pd(g, dec.params(), true), pe(g, enc.params(), true);
        Var cover = g.constant(train.batch(idx));
        Var res = enc.residual(pe, cover, g.constant(pm_bits(msgs)));
        Var marked = ag::add(cover, res);
        Var seen = marked;
        if (tc.use_attacks && step >= tc.clean_warmup) seen = attack::sample_and_apply(tc.pool, marked, rng.engine()()).image;
        Var l_msg = ag::scale(decode_loss(dec.logits(pd, seen), msgs), 1.0f / (tc.batch * cfg.k));
        const float ramp = tc.image_weight_ramp > 0 ? std::min(1.0f, static_cast<float>(step) / tc.image_weight_ramp) : 1.0f;
        Var l_img = ag::scale(ag::mean(ag::square(res)), tc.image_weight * ramp);
        Var loss = ag::add(l_msg, l_img);
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) throw std::runtime_error("train_decoder: non-finite loss at step " + std::to_string(step));
        g.backward(loss);
        dec.params().zero_grad();
        enc.params().zero_grad();
        pd.collect_grads();
        pe.collect_grads();
        if (tc.grad_clip > 0.0f) {
            clip_grads(dec.params(), tc.grad_clip);
            clip_grads(enc.params(), tc.grad_clip);
        }
        opt_d.step(dec.params());
        opt_e.step(enc.params());
        window += l_msg.value()[0];
        ++window_n;
        if (tc.log_every > 0 && ((step + 1) % tc.log_every == 0 || step + 1 == tc.steps)) {
            rep.curve.emplace_back(step + 1, window / window_n);
            window = 0.0;
            window_n = 0;
        }
    }

    // Held-out measurement with the encoder still available.
    if (heldout.size() > 0) {
        Rng er(derive_seed(seed, "decoder-heldout"));
        const attack::AttackPool pool = attack::AttackPool::defaults();
        double clean = 0.0, attacked = 0.0, se = 0.0;
        std::size_t px = 0;
        for (std::size_t i = 0; i < heldout.size(); ++i) {
            const BitMessage m = sample_message(cfg.k, derive_seed(seed, "heldout-msg", i));
            ag::Graph g;
            nn::Bound pe(g, enc.params(), false);
            Var cover = g.constant(heldout.images[i]);
            Var marked = ag::add(cover, enc.residual(pe, cover, g.constant(pm_bits({m}))));
            for (std::size_t j = 0; j < marked.value().size(); ++j) {
                const double d = (marked.value()[j] - heldout.images[i][j]) * 127.5;
                se += d * d;
            }
            px += marked.value().size();
            clean += bit_accuracy(dec.decode(marked.value()).bits[0], m);
            const Tensor hit = attack::apply(attack::sample_spec(pool, er.engine()()), marked.value());
            attacked += bit_accuracy(dec.decode(hit).bits[0], m);
        }
        rep.clean_accuracy = clean / heldout.size();
        rep.attacked_accuracy = attacked / heldout.size();
        rep.residual_psnr = 10.0 * std::log10(255.0 * 255.0 / std::max(se / px, 1e-12));
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (report) *report = rep;
    return dec;
}

}  // namespace onrw::codec
