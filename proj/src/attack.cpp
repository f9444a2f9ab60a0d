#include "onrw/attack.hpp"

#include "onrw/image.hpp"
#include "onrw/ops.hpp"
#include "onrw/rng.hpp"
#include "onrw/warp.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace onrw::attack {

using ag::Var;
using json = nlohmann::json;

const std::vector<Kind>& all_kinds()
{
    static const std::vector<Kind> k{Kind::identity, Kind::crop, Kind::rotate, Kind::resize, Kind::brightness, Kind::jpeg};
    return k;
}

std::string kind_name(Kind k)
{
    switch (k) {
    case Kind::identity: return "identity";
    case Kind::crop: return "crop";
    case Kind::rotate: return "rotate";
    case Kind::resize: return "resize";
    case Kind::brightness: return "brightness";
    case Kind::jpeg: return "jpeg";
    }
    return "?";
}

Kind parse_kind(const std::string& s)
{
    for (Kind k : all_kinds())
        if (kind_name(k) == s) return k;
    throw std::invalid_argument("unknown attack kind '" + s + "'");
}

void AttackSpec::validate() const
{
    const float v = intensity;
    auto fail = [&](const char* what) {
        throw std::invalid_argument(kind_name(kind) + " intensity " + std::to_string(v) + " invalid: " + what);
    };
    if (!std::isfinite(v)) fail("not finite");
    switch (kind) {
    case Kind::crop:
    case Kind::resize:
        if (!(v > 0.0f && v <= 1.0f)) fail("area ratio must lie in (0,1]");
        break;
    case Kind::jpeg:
        if (!(v >= 1.0f && v <= 100.0f)) fail("quality must lie in [1,100]");
        break;
    case Kind::brightness:
        if (!(v > 0.0f)) fail("factor must be positive");
        break;
    default:
        break;
    }
}

json AttackSpec::to_json() const
{
    return {{"kind", kind_name(kind)}, {"intensity", intensity}, {"seed", seed}};
}

AttackPool AttackPool::defaults()
{
    AttackPool p;
    p.specs = {{Kind::identity, 1.0f, 1.0f}, {Kind::crop, 0.3f, 1.0f},       {Kind::rotate, -30.0f, 30.0f},
               {Kind::resize, 0.5f, 1.0f},   {Kind::brightness, 0.8f, 1.6f}, {Kind::jpeg, 50.0f, 95.0f}};
    p.weights.assign(p.specs.size(), 1.0 / p.specs.size());
    return p;
}

AttackPool AttackPool::identity_only()
{
    AttackPool p;
    p.specs = {{Kind::identity, 1.0f, 1.0f}};
    p.weights = {1.0};
    return p;
}

void AttackPool::validate() const
{
    if (specs.empty()) throw std::invalid_argument("attack pool is empty");
    if (weights.size() != specs.size()) throw std::invalid_argument("attack pool needs one weight per template");
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw std::invalid_argument("attack pool weights must be non-negative");
        total += w;
    }
    if (std::fabs(total - 1.0) > 1e-6) throw std::invalid_argument("attack pool weights must sum to 1");
    for (const auto& t : specs) {
        if (t.lo > t.hi) throw std::invalid_argument("attack template range is reversed for " + kind_name(t.kind));
        AttackSpec{t.kind, t.lo, 0}.validate();
        AttackSpec{t.kind, t.hi, 0}.validate();
    }
}

json AttackPool::to_json() const
{
    json a = json::array();
    for (std::size_t i = 0; i < specs.size(); ++i)
        a.push_back({{"kind", kind_name(specs[i].kind)}, {"min", specs[i].lo}, {"max", specs[i].hi}, {"weight", weights[i]}});
    return a;
}

AttackPool AttackPool::from_json(const json& j)
{
    if (!j.is_array()) throw std::invalid_argument("attack pool must be a list");
    AttackPool p;
    for (const auto& e : j) {
        for (auto it = e.begin(); it != e.end(); ++it)
            if (it.key() != "kind" && it.key() != "min" && it.key() != "max" && it.key() != "weight")
                throw std::invalid_argument("unknown attack pool key '" + it.key() + "'");
        AttackTemplate t;
        t.kind = parse_kind(e.at("kind").get<std::string>());
        t.lo = e.value("min", 1.0f);
        t.hi = e.value("max", t.lo);
        p.specs.push_back(t);
        p.weights.push_back(e.value("weight", 1.0));
    }
    // Weights given as relative frequencies are normalised here.
    const double total = std::accumulate(p.weights.begin(), p.weights.end(), 0.0);
    if (total > 0)
        for (double& w : p.weights) w /= total;
    p.validate();
    return p;
}

namespace {

// Pixel-domain JPEG works on values in [0,255].
constexpr std::array<float, 9> kRgbToYcc{0.299f, 0.587f, 0.114f, -0.168736f, -0.331264f, 0.5f, 0.5f, -0.418688f, -0.081312f};
constexpr std::array<float, 9> kYccToRgb{1.0f, 0.0f, 1.402f, 1.0f, -0.344136f, -0.714136f, 1.0f, 1.772f, 0.0f};

Tensor tiled_table(const std::array<int, 64>& table, int batch, int channels, int h, int w)
{
    Tensor t({batch, channels, h, w});
    for (int b = 0; b < batch; ++b)
        for (int c = 0; c < channels; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) t.at(b, c, y, x) = static_cast<float>(table[(y % 8) * 8 + x % 8]);
    return t;
}

Tensor reciprocal(Tensor t)
{
    for (auto& v : t.values()) v = 1.0f / v;
    return t;
}

Var quantize_planes(Var planes, const std::array<int, 64>& table, bool round)
{
    const Tensor q = tiled_table(table, planes.dim(0), planes.dim(1), planes.dim(2), planes.dim(3));
    Var coef = ag::block_dct8(planes, false);
    Var scaled = ag::mul_const(coef, reciprocal(q));
    if (round) scaled = ag::round_ste(scaled);
    return ag::block_dct8(ag::mul_const(scaled, q), true);
}

// Reflect-pads H and W up to a multiple of `m` (mirror without edge repeat).
warp::MapPtr reflect_pad_map(int h, int w, int m)
{
    const int ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
    auto mp = std::make_shared<ag::SparseMap>();
    mp->in_h = h;
    mp->in_w = w;
    mp->out_h = ph;
    mp->out_w = pw;
    mp->row_begin.push_back(0);
    auto reflect = [](int i, int n) {
        if (n == 1) return 0;
        const int period = 2 * (n - 1);
        i %= period;
        return i < n ? i : period - i;
    };
    for (int y = 0; y < ph; ++y)
        for (int x = 0; x < pw; ++x) {
            mp->index.push_back(reflect(y, h) * w + reflect(x, w));
            mp->weight.push_back(1.0f);
            mp->row_begin.push_back(static_cast<int>(mp->index.size()));
        }
    return mp;
}

warp::MapPtr top_left_crop_map(int in_h, int in_w, int h, int w)
{
    auto mp = std::make_shared<ag::SparseMap>();
    mp->in_h = in_h;
    mp->in_w = in_w;
    mp->out_h = h;
    mp->out_w = w;
    mp->row_begin.push_back(0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            mp->index.push_back(y * in_w + x);
            mp->weight.push_back(1.0f);
            mp->row_begin.push_back(static_cast<int>(mp->index.size()));
        }
    return mp;
}

}  // namespace

Var differentiable_jpeg(Var image, float quality, const JpegOptions& opt)
{
    if (!(quality >= 1.0f && quality <= 100.0f)) throw std::invalid_argument("differentiable_jpeg: quality outside [1,100]");
    if (image.rank() != 4 || image.dim(1) != 3) throw std::invalid_argument("differentiable_jpeg: expected [B,3,H,W]");
    const int q = static_cast<int>(std::lround(quality));
    const int h = image.dim(2), w = image.dim(3);
    const int m = opt.subsample_chroma ? 16 : 8;
    Var x = image;
    const bool padded = h % m || w % m;
    if (padded) x = ag::resample(x, reflect_pad_map(h, w, m));

    Var pix = ag::scale(ag::add_scalar(x, 1.0f), 127.5f);
    Var ycc = ag::color_affine(pix, kRgbToYcc, {-128.0f, 0.0f, 0.0f});
    Var luma = quantize_planes(ag::slice_axis(ycc, 1, 0, 1), image::scaled_quant_table(image::kLumaQuant, q), opt.round);
    Var chroma = ag::slice_axis(ycc, 1, 1, 2);
    if (opt.subsample_chroma) chroma = ag::avg_pool(chroma, 2);
    chroma = quantize_planes(chroma, image::scaled_quant_table(image::kChromaQuant, q), opt.round);
    if (opt.subsample_chroma) chroma = ag::upsample_nearest(chroma, 2);
    Var rgb = ag::color_affine(ag::concat_channels(luma, chroma), kYccToRgb, {128.0f, 128.0f, 128.0f});
    Var out = ag::add_scalar(ag::scale(ag::clamp(rgb, 0.0f, 255.0f), 1.0f / 127.5f), -1.0f);
    if (padded) out = ag::resample(out, top_left_crop_map(out.dim(2), out.dim(3), h, w));
    return out;
}

Var apply(const AttackSpec& spec, Var image, const JpegOptions& jpeg)
{
    spec.validate();
    if (image.rank() != 4) throw std::invalid_argument("attack: expected an NCHW image");
    const int h = image.dim(2), w = image.dim(3);
    Var out;
    switch (spec.kind) {
    case Kind::identity:
        return image;
    case Kind::crop:
        out = ag::resample(image, warp::random_crop_map(h, w, spec.intensity, spec.seed));
        break;
    case Kind::resize:
        out = ag::resample(image, warp::area_resize_map(h, w, spec.intensity));
        break;
    case Kind::rotate:
        // Zero padding in [0,1] pixel space is black, i.e. -1 here.
        out = ag::add_scalar(ag::resample(ag::add_scalar(image, 1.0f), warp::rotate_map(h, w, spec.intensity)), -1.0f);
        break;
    case Kind::brightness:
        out = ag::add_scalar(ag::clamp(ag::scale(ag::add_scalar(image, 1.0f), spec.intensity), 0.0f, 2.0f), -1.0f);
        break;
    case Kind::jpeg:
        out = differentiable_jpeg(image, spec.intensity, jpeg);
        break;
    }
    if (!out.value().all_finite()) throw std::runtime_error("attack " + kind_name(spec.kind) + " produced non-finite output");
    return out;
}

Tensor apply(const AttackSpec& spec, const Tensor& image, const JpegOptions& jpeg)
{
    ag::Graph g;
    return apply(spec, g.constant(image), jpeg).value();
}

AttackSpec sample_spec(const AttackPool& pool, std::uint64_t seed)
{
    pool.validate();
    Rng rng(seed);
    const double u = rng.uniform(0.0f, 1.0f);
    std::size_t pick = pool.specs.size() - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < pool.weights.size(); ++i) {
        acc += pool.weights[i];
        if (u < acc) {
            pick = i;
            break;
        }
    }
    const AttackTemplate& t = pool.specs[pick];
    AttackSpec s;
    s.kind = t.kind;
    s.intensity = t.lo == t.hi ? t.lo : rng.uniform(t.lo, t.hi);
    s.seed = mix64(seed ^ 0xa5a5a5a5ULL);
    return s;
}

Sampled sample_and_apply(const AttackPool& pool, Var image, std::uint64_t seed, const JpegOptions& jpeg)
{
    AttackSpec s = sample_spec(pool, seed);
    return {apply(s, image, jpeg), s};
}

}  // namespace onrw::attack
