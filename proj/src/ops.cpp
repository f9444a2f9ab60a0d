#include "onrw/ops.hpp"

#include "onrw/kernels.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace onrw::ag {

namespace {

void same_shape(Var a, Var b, const char* op)
{
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

void need_rank(Var a, int rank, const char* op)
{
    if (a.value().rank() != rank)
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                    shape_str(a.shape()));
}

// y = f(x); dy/dx = d(x, y)
template <class F, class D>
Var unary(Var a, F f, D d)
{
    const Tensor& x = a.value();
    Tensor y(x.shape());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) y[i] = f(x[i]);
    return a.graph().record(std::move(y), {a}, [a, d](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        const Tensor& xv = g.value(a.id());
        const Tensor& yv = g.value(self);
        Tensor& gx = g.grad_accumulator(a.id());
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * d(xv[i], yv[i]);
    });
}

void accumulate(Tensor& dst, const Tensor& src, float s = 1.0f)
{
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

// Gather/scatter through a fixed index table: out[i] = in[idx[i]].
Var permute_by_index(Var a, Shape out_shape, std::shared_ptr<const std::vector<int>> idx)
{
    const Tensor& x = a.value();
    Tensor y(std::move(out_shape));
    const auto& ix = *idx;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = x[ix[i]];
    return a.graph().record(std::move(y), {a}, [a, idx](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad_accumulator(a.id());
        const auto& ix = *idx;
        for (std::size_t i = 0; i < gy.size(); ++i) gx[ix[i]] += gy[i];
    });
}

std::array<float, 64> dct8_matrix()
{
    std::array<float, 64> d{};
    for (int k = 0; k < 8; ++k) {
        const double c = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
        for (int n = 0; n < 8; ++n)
            d[k * 8 + n] = static_cast<float>(c * std::cos((2 * n + 1) * k * std::numbers::pi / 16.0));
    }
    return d;
}

// inverse=false: Y = D X D^T, inverse=true: X = D^T Y D
void dct_planes(const Tensor& in, Tensor& out, bool inverse, bool accumulate_out)
{
    static const std::array<float, 64> d = dct8_matrix();
    const int h = in.dim(-2), w = in.dim(-1);
    const std::size_t planes = in.size() / (static_cast<std::size_t>(h) * w);
#pragma omp parallel for schedule(static) if (in.size() > 16384)
    for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(planes); ++p) {
        const float* src = in.data() + p * h * w;
        float* dst = out.data() + p * h * w;
        float tmp[64], blk[64];
        for (int by = 0; by < h; by += 8)
            for (int bx = 0; bx < w; bx += 8) {
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) blk[i * 8 + j] = src[(by + i) * w + bx + j];
                // tmp = A * blk where A = D (forward) or D^T (inverse)
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) {
                        float acc = 0.0f;
                        for (int k = 0; k < 8; ++k) acc += (inverse ? d[k * 8 + i] : d[i * 8 + k]) * blk[k * 8 + j];
                        tmp[i * 8 + j] = acc;
                    }
                // res = tmp * A^T
                for (int i = 0; i < 8; ++i)
                    for (int j = 0; j < 8; ++j) {
                        float acc = 0.0f;
                        for (int k = 0; k < 8; ++k) acc += tmp[i * 8 + k] * (inverse ? d[k * 8 + j] : d[j * 8 + k]);
                        float& o = dst[(by + i) * w + bx + j];
                        o = accumulate_out ? o + acc : acc;
                    }
            }
    }
}

}  // namespace

// --- elementwise ------------------------------------------------------------

Var add(Var a, Var b)
{
    same_shape(a, b, "add");
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
    return a.graph().record(std::move(y), {a, b}, [a, b](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        if (g.needs_grad(a.id())) accumulate(g.grad_accumulator(a.id()), gy);
        if (g.needs_grad(b.id())) accumulate(g.grad_accumulator(b.id()), gy);
    });
}

Var sub(Var a, Var b)
{
    same_shape(a, b, "sub");
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
    return a.graph().record(std::move(y), {a, b}, [a, b](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        if (g.needs_grad(a.id())) accumulate(g.grad_accumulator(a.id()), gy);
        if (g.needs_grad(b.id())) accumulate(g.grad_accumulator(b.id()), gy, -1.0f);
    });
}

Var mul(Var a, Var b)
{
    same_shape(a, b, "mul");
    Tensor y = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
    return a.graph().record(std::move(y), {a, b}, [a, b](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        const Tensor& av = g.value(a.id());
        const Tensor& bv = g.value(b.id());
        if (g.needs_grad(a.id())) {
            Tensor& ga = g.grad_accumulator(a.id());
            for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
        }
        if (g.needs_grad(b.id())) {
            Tensor& gb = g.grad_accumulator(b.id());
            for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
        }
    });
}

Var scale(Var a, float s)
{
    return unary(a, [s](float x) { return s * x; }, [s](float, float) { return s; });
}

Var add_scalar(Var a, float s)
{
    return unary(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Var add_const(Var a, const Tensor& c)
{
    if (!a.value().same_shape(c)) throw std::invalid_argument("add_const: shape mismatch");
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += c[i];
    return a.graph().record(std::move(y), {a}, [a](Graph& g, int self) {
        accumulate(g.grad_accumulator(a.id()), g.grad(self));
    });
}

Var mul_const(Var a, const Tensor& c)
{
    if (!a.value().same_shape(c)) throw std::invalid_argument("mul_const: shape mismatch");
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] *= c[i];
    auto cc = std::make_shared<const Tensor>(c);
    return a.graph().record(std::move(y), {a}, [a, cc](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        Tensor& ga = g.grad_accumulator(a.id());
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * (*cc)[i];
    });
}

Var square(Var a)
{
    return unary(a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Var sigmoid(Var a)
{
    return unary(
        a, [](float x) { return 1.0f / (1.0f + std::exp(-x)); }, [](float, float y) { return y * (1.0f - y); });
}

Var silu(Var a)
{
    return unary(
        a, [](float x) { return x / (1.0f + std::exp(-x)); },
        [](float x, float) {
            const float s = 1.0f / (1.0f + std::exp(-x));
            return s * (1.0f + x * (1.0f - s));
        });
}

Var relu(Var a)
{
    return unary(a, [](float x) { return x > 0.0f ? x : 0.0f; }, [](float x, float) { return x > 0.0f ? 1.0f : 0.0f; });
}

Var leaky_relu(Var a, float slope)
{
    return unary(
        a, [slope](float x) { return x > 0.0f ? x : slope * x; },
        [slope](float x, float) { return x > 0.0f ? 1.0f : slope; });
}

Var tanh(Var a)
{
    return unary(a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.0f - y * y; });
}

Var clamp(Var a, float lo, float hi)
{
    return unary(
        a, [lo, hi](float x) { return x < lo ? lo : (x > hi ? hi : x); },
        [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

Var round_ste(Var a)
{
    return unary(a, [](float x) { return std::nearbyint(x); }, [](float, float) { return 1.0f; });
}

// --- reductions ---------------------------------------------------------------

Var sum(Var a)
{
    double s = 0.0;
    for (float v : a.value().values()) s += v;
    return a.graph().record(Tensor::scalar(static_cast<float>(s)), {a}, [a](Graph& g, int self) {
        const float gy = g.grad(self)[0];
        for (float& v : g.grad_accumulator(a.id()).values()) v += gy;
    });
}

Var mean(Var a)
{
    const float n = static_cast<float>(a.value().size());
    double s = 0.0;
    for (float v : a.value().values()) s += v;
    return a.graph().record(Tensor::scalar(static_cast<float>(s / n)), {a}, [a, n](Graph& g, int self) {
        const float gy = g.grad(self)[0] / n;
        for (float& v : g.grad_accumulator(a.id()).values()) v += gy;
    });
}

Var sum_squares(Var a)
{
    double s = 0.0;
    for (float v : a.value().values()) s += static_cast<double>(v) * v;
    return a.graph().record(Tensor::scalar(static_cast<float>(s)), {a}, [a](Graph& g, int self) {
        const float gy = g.grad(self)[0];
        const Tensor& x = g.value(a.id());
        Tensor& gx = g.grad_accumulator(a.id());
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += 2.0f * gy * x[i];
    });
}

Var l2_norm(Var a)
{
    double s = 0.0;
    for (float v : a.value().values()) s += static_cast<double>(v) * v;
    const float nrm = static_cast<float>(std::sqrt(s));
    return a.graph().record(Tensor::scalar(nrm), {a}, [a](Graph& g, int self) {
        const float nv = g.value(self)[0];
        if (nv == 0.0f) return;
        const float gy = g.grad(self)[0] / nv;
        const Tensor& x = g.value(a.id());
        Tensor& gx = g.grad_accumulator(a.id());
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy * x[i];
    });
}

// --- shape / layout -----------------------------------------------------------

Var reshape(Var a, Shape shape)
{
    Tensor y = a.value().reshaped(std::move(shape));
    return a.graph().record(std::move(y), {a}, [a](Graph& g, int self) {
        accumulate(g.grad_accumulator(a.id()), g.grad(self));
    });
}

Var slice_batch(Var a, int begin, int count)
{
    const Tensor& x = a.value();
    const int n = x.dim(0);
    if (begin < 0 || count <= 0 || begin + count > n) throw std::out_of_range("slice_batch: range out of bounds");
    const std::size_t per = x.size() / n;
    Shape s = x.shape();
    s[0] = count;
    Tensor y(s);
    std::copy_n(x.data() + begin * per, count * per, y.data());
    return a.graph().record(std::move(y), {a}, [a, begin, per](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad_accumulator(a.id());
        for (std::size_t i = 0; i < gy.size(); ++i) gx[begin * per + i] += gy[i];
    });
}

Var concat_batch(const std::vector<Var>& parts)
{
    if (parts.empty()) throw std::invalid_argument("concat_batch: no inputs");
    Shape s = parts[0].shape();
    int total = 0;
    for (const Var& p : parts) {
        Shape ps = p.shape();
        ps[0] = s[0];
        if (ps != s) throw std::invalid_argument("concat_batch: trailing shape mismatch");
        total += p.dim(0);
    }
    s[0] = total;
    Tensor y(s);
    std::size_t off = 0;
    for (const Var& p : parts) {
        std::copy_n(p.value().data(), p.value().size(), y.data() + off);
        off += p.value().size();
    }
    return parts[0].graph().record(std::move(y), parts, [parts](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        std::size_t off = 0;
        for (const Var& p : parts) {
            const std::size_t n = p.value().size();
            if (g.needs_grad(p.id())) {
                Tensor& gp = g.grad_accumulator(p.id());
                for (std::size_t i = 0; i < n; ++i) gp[i] += gy[off + i];
            }
            off += n;
        }
    });
}

Var repeat_batch(Var a, int n)
{
    const Tensor& x = a.value();
    if (x.dim(0) != 1) throw std::invalid_argument("repeat_batch: batch must be 1");
    Shape s = x.shape();
    s[0] = n;
    Tensor y(s);
    for (int i = 0; i < n; ++i) std::copy_n(x.data(), x.size(), y.data() + i * x.size());
    return a.graph().record(std::move(y), {a}, [a, n](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad_accumulator(a.id());
        const std::size_t per = gx.size();
        for (int i = 0; i < n; ++i)
            for (std::size_t j = 0; j < per; ++j) gx[j] += gy[i * per + j];
    });
}

Var concat_channels(Var a, Var b)
{
    need_rank(a, 4, "concat_channels");
    need_rank(b, 4, "concat_channels");
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    if (b.dim(0) != n || b.dim(2) != h || b.dim(3) != w) throw std::invalid_argument("concat_channels: shape mismatch");
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    Tensor y({n, ca + cb, h, w});
    for (int i = 0; i < n; ++i) {
        std::copy_n(a.value().data() + i * ca * hw, ca * hw, y.data() + i * (ca + cb) * hw);
        std::copy_n(b.value().data() + i * cb * hw, cb * hw, y.data() + (i * (ca + cb) + ca) * hw);
    }
    return a.graph().record(std::move(y), {a, b}, [a, b, n, ca, cb, hw](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        if (g.needs_grad(a.id())) {
            Tensor& ga = g.grad_accumulator(a.id());
            for (int i = 0; i < n; ++i)
                for (std::size_t j = 0; j < ca * hw; ++j) ga[i * ca * hw + j] += gy[i * (ca + cb) * hw + j];
        }
        if (g.needs_grad(b.id())) {
            Tensor& gb = g.grad_accumulator(b.id());
            for (int i = 0; i < n; ++i)
                for (std::size_t j = 0; j < cb * hw; ++j) gb[i * cb * hw + j] += gy[(i * (ca + cb) + ca) * hw + j];
        }
    });
}

namespace {

struct AxisSplit {
    std::size_t outer = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis)
{
    AxisSplit r;
    for (int i = 0; i < axis; ++i) r.outer *= s[i];
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) r.inner *= s[i];
    return r;
}

}  // namespace

Var concat_axis(const std::vector<Var>& parts, int axis)
{
    if (parts.empty()) throw std::invalid_argument("concat_axis: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis < 0) axis += static_cast<int>(s0.size());
    if (axis < 0 || axis >= static_cast<int>(s0.size())) throw std::invalid_argument("concat_axis: bad axis");
    std::vector<int> widths;
    int total = 0;
    for (const Var& p : parts) {
        Shape s = p.shape();
        if (s.size() != s0.size()) throw std::invalid_argument("concat_axis: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (static_cast<int>(i) != axis && s[i] != s0[i]) throw std::invalid_argument("concat_axis: shape mismatch");
        widths.push_back(s[axis]);
        total += s[axis];
    }
    Shape out_shape = s0;
    out_shape[axis] = total;
    const AxisSplit sp = split_at(s0, axis);
    Tensor y(out_shape);
    int offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t run = widths[k] * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(parts[k].value().data() + o * run, run, y.data() + (o * total + offset) * sp.inner);
        offset += widths[k];
    }
    return parts[0].graph().record(std::move(y), parts, [parts, widths, total, sp](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        int offset = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            const std::size_t run = widths[k] * sp.inner;
            if (g.needs_grad(parts[k].id())) {
                Tensor& gp = g.grad_accumulator(parts[k].id());
                for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t j = 0; j < run; ++j) gp[o * run + j] += gy[(o * total + offset) * sp.inner + j];
            }
            offset += widths[k];
        }
    });
}

Var slice_axis(Var a, int axis, int begin, int count)
{
    Shape s = a.shape();
    if (axis < 0) axis += static_cast<int>(s.size());
    if (axis < 0 || axis >= static_cast<int>(s.size()) || begin < 0 || count < 1 || begin + count > s[axis])
        throw std::invalid_argument("slice_axis: range out of bounds for " + shape_str(s));
    const AxisSplit sp = split_at(s, axis);
    const int width = s[axis];
    s[axis] = count;
    Tensor y(s);
    const std::size_t run = count * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(a.value().data() + (o * width + begin) * sp.inner, run, y.data() + o * run);
    return a.graph().record(std::move(y), {a}, [a, sp, width, begin, run](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        Tensor& ga = g.grad_accumulator(a.id());
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t j = 0; j < run; ++j) ga[(o * width + begin) * sp.inner + j] += gy[o * run + j];
    });
}

Var patchify(Var a, int p)
{
    need_rank(a, 4, "patchify");
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    if (h % p || w % p) throw std::invalid_argument("patchify: size not divisible by patch");
    const int oh = h / p, ow = w / p, oc = c * p * p;
    auto idx = std::make_shared<std::vector<int>>(a.value().size());
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int dy = 0; dy < p; ++dy)
                for (int dx = 0; dx < p; ++dx)
                    for (int y = 0; y < oh; ++y)
                        for (int x = 0; x < ow; ++x) {
                            const int o = ((b * oc + (ch * p + dy) * p + dx) * oh + y) * ow + x;
                            (*idx)[o] = ((b * c + ch) * h + y * p + dy) * w + x * p + dx;
                        }
    return permute_by_index(a, {n, oc, oh, ow}, idx);
}

Var unpatchify(Var a, int p)
{
    need_rank(a, 4, "unpatchify");
    const int n = a.dim(0), oc = a.dim(1), oh = a.dim(2), ow = a.dim(3);
    if (oc % (p * p)) throw std::invalid_argument("unpatchify: channels not divisible by p*p");
    const int c = oc / (p * p), h = oh * p, w = ow * p;
    auto idx = std::make_shared<std::vector<int>>(a.value().size());
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const int dy = y % p, dx = x % p;
                    const int o = ((b * c + ch) * h + y) * w + x;
                    (*idx)[o] = ((b * oc + (ch * p + dy) * p + dx) * oh + y / p) * ow + x / p;
                }
    return permute_by_index(a, {n, c, h, w}, idx);
}

Var to_tokens(Var a)
{
    need_rank(a, 4, "to_tokens");
    const int n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
    auto idx = std::make_shared<std::vector<int>>(a.value().size());
    for (int b = 0; b < n; ++b)
        for (int p = 0; p < hw; ++p)
            for (int ch = 0; ch < c; ++ch) (*idx)[(b * hw + p) * c + ch] = (b * c + ch) * hw + p;
    return permute_by_index(a, {n, hw, c}, idx);
}

Var from_tokens(Var a, int height, int width)
{
    need_rank(a, 3, "from_tokens");
    const int n = a.dim(0), hw = a.dim(1), c = a.dim(2);
    if (hw != height * width) throw std::invalid_argument("from_tokens: token count mismatch");
    auto idx = std::make_shared<std::vector<int>>(a.value().size());
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (int p = 0; p < hw; ++p) (*idx)[(b * c + ch) * hw + p] = (b * hw + p) * c + ch;
    return permute_by_index(a, {n, c, height, width}, idx);
}

Var upsample_nearest(Var a, int factor)
{
    need_rank(a, 4, "upsample_nearest");
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    const int oh = h * factor, ow = w * factor;
    auto idx = std::make_shared<std::vector<int>>(static_cast<std::size_t>(n) * c * oh * ow);
    for (int p = 0; p < n * c; ++p)
        for (int y = 0; y < oh; ++y)
            for (int x = 0; x < ow; ++x) (*idx)[(p * oh + y) * ow + x] = (p * h + y / factor) * w + x / factor;
    return permute_by_index(a, {n, c, oh, ow}, idx);
}

Var avg_pool(Var a, int factor)
{
    need_rank(a, 4, "avg_pool");
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    if (h % factor || w % factor) throw std::invalid_argument("avg_pool: size not divisible");
    const int oh = h / factor, ow = w / factor;
    const float inv = 1.0f / static_cast<float>(factor * factor);
    const Tensor& x = a.value();
    Tensor y({n, c, oh, ow});
    for (int p = 0; p < n * c; ++p)
        for (int yy = 0; yy < oh; ++yy)
            for (int xx = 0; xx < ow; ++xx) {
                float s = 0.0f;
                for (int dy = 0; dy < factor; ++dy)
                    for (int dx = 0; dx < factor; ++dx) s += x[(p * h + yy * factor + dy) * w + xx * factor + dx];
                y[(p * oh + yy) * ow + xx] = s * inv;
            }
    return a.graph().record(std::move(y), {a}, [a, n, c, h, w, factor, inv](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad_accumulator(a.id());
        const int oh = h / factor, ow = w / factor;
        for (int p = 0; p < n * c; ++p)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) gx[(p * h + yy) * w + xx] += gy[(p * oh + yy / factor) * ow + xx / factor] * inv;
    });
}

Var global_avg_pool(Var a)
{
    need_rank(a, 4, "global_avg_pool");
    const int n = a.dim(0), c = a.dim(1);
    const int hw = a.dim(2) * a.dim(3);
    const Tensor& x = a.value();
    Tensor y({n, c});
    for (int p = 0; p < n * c; ++p) {
        double s = 0.0;
        for (int i = 0; i < hw; ++i) s += x[p * hw + i];
        y[p] = static_cast<float>(s / hw);
    }
    return a.graph().record(std::move(y), {a}, [a, n, c, hw](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad_accumulator(a.id());
        for (int p = 0; p < n * c; ++p) {
            const float v = gy[p] / static_cast<float>(hw);
            for (int i = 0; i < hw; ++i) gx[p * hw + i] += v;
        }
    });
}

Var expand_spatial(Var a, int height, int width)
{
    need_rank(a, 2, "expand_spatial");
    const int n = a.dim(0), k = a.dim(1), hw = height * width;
    Tensor y({n, k, height, width});
    for (int p = 0; p < n * k; ++p) std::fill_n(y.data() + p * hw, hw, a.value()[p]);
    return a.graph().record(std::move(y), {a}, [a, n, k, hw](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad_accumulator(a.id());
        for (int p = 0; p < n * k; ++p) {
            double s = 0.0;
            for (int i = 0; i < hw; ++i) s += gy[p * hw + i];
            gx[p] += static_cast<float>(s);
        }
    });
}

Var add_channel(Var x, Var v)
{
    need_rank(x, 4, "add_channel");
    need_rank(v, 2, "add_channel");
    const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (v.dim(0) != n || v.dim(1) != c) throw std::invalid_argument("add_channel: shape mismatch");
    Tensor y = x.value();
    for (int p = 0; p < n * c; ++p) {
        const float b = v.value()[p];
        for (int i = 0; i < hw; ++i) y[p * hw + i] += b;
    }
    return x.graph().record(std::move(y), {x, v}, [x, v, n, c, hw](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        if (g.needs_grad(x.id())) accumulate(g.grad_accumulator(x.id()), gy);
        if (g.needs_grad(v.id())) {
            Tensor& gv = g.grad_accumulator(v.id());
            for (int p = 0; p < n * c; ++p) {
                double s = 0.0;
                for (int i = 0; i < hw; ++i) s += gy[p * hw + i];
                gv[p] += static_cast<float>(s);
            }
        }
    });
}

Var mul_spatial_const(Var x, const Tensor& m)
{
    need_rank(x, 4, "mul_spatial_const");
    const int h = x.dim(2), w = x.dim(3);
    if (m.size() != static_cast<std::size_t>(h) * w) throw std::invalid_argument("mul_spatial_const: mask size mismatch");
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const std::size_t planes = x.value().size() / hw;
    Tensor y = x.value();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < hw; ++i) y[p * hw + i] *= m[i];
    auto mm = std::make_shared<const Tensor>(m);
    return x.graph().record(std::move(y), {x}, [x, mm, hw, planes](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad_accumulator(x.id());
        for (std::size_t p = 0; p < planes; ++p)
            for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += gy[p * hw + i] * (*mm)[i];
    });
}

Var mul_channel_const(Var x, const Tensor& m)
{
    need_rank(x, 4, "mul_channel_const");
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    if (m.size() != static_cast<std::size_t>(c)) throw std::invalid_argument("mul_channel_const: size mismatch");
    Tensor y = x.value();
    for (int b = 0; b < n; ++b)
        for (int ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < hw; ++i) y[(b * c + ch) * hw + i] *= m[ch];
    auto mm = std::make_shared<const Tensor>(m);
    return x.graph().record(std::move(y), {x}, [x, mm, n, c, hw](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad_accumulator(x.id());
        for (int b = 0; b < n; ++b)
            for (int ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < hw; ++i) gx[(b * c + ch) * hw + i] += gy[(b * c + ch) * hw + i] * (*mm)[ch];
    });
}

// --- layers -------------------------------------------------------------------

Var conv2d(Var x, Var weight, Var bias, int stride, int pad)
{
    need_rank(x, 4, "conv2d");
    need_rank(weight, 4, "conv2d weight");
    kernels::ConvShape s;
    s.batch = x.dim(0);
    s.in_ch = x.dim(1);
    s.height = x.dim(2);
    s.width = x.dim(3);
    s.out_ch = weight.dim(0);
    s.kernel = weight.dim(2);
    s.stride = stride;
    s.pad = pad;
    if (weight.dim(1) != s.in_ch || weight.dim(3) != s.kernel)
        throw std::invalid_argument("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                                    shape_str(x.shape()));
    if (bias.valid() && bias.value().size() != static_cast<std::size_t>(s.out_ch))
        throw std::invalid_argument("conv2d: bias size mismatch");
    Tensor y({s.batch, s.out_ch, s.out_h(), s.out_w()});
    kernels::conv2d_forward(s, x.value().data(), weight.value().data(), bias.valid() ? bias.value().data() : nullptr,
                            y.data());
    std::vector<Var> inputs{x, weight};
    if (bias.valid()) inputs.push_back(bias);
    return x.graph().record(std::move(y), inputs, [x, weight, bias, s](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        if (g.needs_grad(x.id()))
            kernels::conv2d_backward_input(s, gy.data(), g.value(weight.id()).data(), g.grad_accumulator(x.id()).data());
        const bool gw = g.needs_grad(weight.id());
        const bool gb = bias.valid() && g.needs_grad(bias.id());
        if (gw || gb) {
            if (gw) {
                kernels::conv2d_backward_weight(s, g.value(x.id()).data(), gy.data(),
                                                g.grad_accumulator(weight.id()).data(),
                                                gb ? g.grad_accumulator(bias.id()).data() : nullptr);
            } else {
                Tensor& gbt = g.grad_accumulator(bias.id());
                const int p = s.out_h() * s.out_w();
                for (int b = 0; b < s.batch; ++b)
                    for (int co = 0; co < s.out_ch; ++co)
                        for (int i = 0; i < p; ++i) gbt[co] += gy[(b * s.out_ch + co) * p + i];
            }
        }
    });
}

Var linear(Var x, Var weight, Var bias)
{
    need_rank(weight, 2, "linear weight");
    const int cout = weight.dim(0), cin = weight.dim(1);
    if (x.dim(-1) != cin)
        throw std::invalid_argument("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                                    shape_str(weight.shape()));
    const int rows = static_cast<int>(x.value().size() / cin);
    Shape s = x.shape();
    s.back() = cout;
    Tensor y(s);
    kernels::gemm(false, true, rows, cout, cin, 1.0f, x.value().data(), weight.value().data(), 0.0f, y.data());
    if (bias.valid()) {
        const Tensor& bv = bias.value();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cout; ++c) y[static_cast<std::size_t>(r) * cout + c] += bv[c];
    }
    std::vector<Var> inputs{x, weight};
    if (bias.valid()) inputs.push_back(bias);
    return x.graph().record(std::move(y), inputs, [x, weight, bias, rows, cin, cout](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        if (g.needs_grad(x.id()))
            kernels::gemm(false, false, rows, cin, cout, 1.0f, gy.data(), g.value(weight.id()).data(), 1.0f,
                          g.grad_accumulator(x.id()).data());
        if (g.needs_grad(weight.id()))
            kernels::gemm(true, false, cout, cin, rows, 1.0f, gy.data(), g.value(x.id()).data(), 1.0f,
                          g.grad_accumulator(weight.id()).data());
        if (bias.valid() && g.needs_grad(bias.id())) {
            Tensor& gb = g.grad_accumulator(bias.id());
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cout; ++c) gb[c] += gy[static_cast<std::size_t>(r) * cout + c];
        }
    });
}

Var group_norm(Var x, Var gamma, Var beta, int groups, float eps)
{
    const int n = x.dim(0), c = x.dim(1);
    const int spatial = static_cast<int>(x.value().size() / (static_cast<std::size_t>(n) * c));
    if (c % groups) throw std::invalid_argument("group_norm: channels not divisible by groups");
    if (gamma.value().size() != static_cast<std::size_t>(c) || beta.value().size() != static_cast<std::size_t>(c))
        throw std::invalid_argument("group_norm: affine size mismatch");
    Tensor y(x.shape());
    auto stats = std::make_shared<std::vector<float>>(2 * static_cast<std::size_t>(n) * groups);
    kernels::group_norm_forward(n, c, spatial, groups, eps, x.value().data(), gamma.value().data(),
                                beta.value().data(), y.data(), stats->data(), stats->data() + n * groups);
    return x.graph().record(std::move(y), {x, gamma, beta}, [x, gamma, beta, n, c, spatial, groups, stats](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        float* gx = g.needs_grad(x.id()) ? g.grad_accumulator(x.id()).data() : nullptr;
        float* gg = g.needs_grad(gamma.id()) ? g.grad_accumulator(gamma.id()).data() : nullptr;
        float* gb = g.needs_grad(beta.id()) ? g.grad_accumulator(beta.id()).data() : nullptr;
        kernels::group_norm_backward(n, c, spatial, groups, g.value(x.id()).data(), g.value(gamma.id()).data(),
                                     stats->data(), stats->data() + n * groups, gy.data(), gx, gg, gb);
    });
}

Var bmm(Var a, Var b, bool trans_a, bool trans_b)
{
    need_rank(a, 3, "bmm");
    need_rank(b, 3, "bmm");
    const int batch = a.dim(0);
    if (b.dim(0) != batch) throw std::invalid_argument("bmm: batch mismatch");
    const int m = trans_a ? a.dim(2) : a.dim(1);
    const int k = trans_a ? a.dim(1) : a.dim(2);
    const int kb = trans_b ? b.dim(2) : b.dim(1);
    const int n = trans_b ? b.dim(1) : b.dim(2);
    if (k != kb) throw std::invalid_argument("bmm: inner dimension mismatch");
    Tensor y({batch, m, n});
    kernels::batched_gemm(batch, trans_a, trans_b, m, n, k, 1.0f, a.value().data(), b.value().data(), 0.0f, y.data());
    return a.graph().record(std::move(y), {a, b}, [a, b, batch, m, n, k, trans_a, trans_b](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        const float* av = g.value(a.id()).data();
        const float* bv = g.value(b.id()).data();
        if (g.needs_grad(a.id())) {
            float* ga = g.grad_accumulator(a.id()).data();
            if (!trans_a)
                kernels::batched_gemm(batch, false, !trans_b, m, k, n, 1.0f, gy.data(), bv, 1.0f, ga);
            else
                kernels::batched_gemm(batch, trans_b, true, k, m, n, 1.0f, bv, gy.data(), 1.0f, ga);
        }
        if (g.needs_grad(b.id())) {
            float* gb = g.grad_accumulator(b.id()).data();
            if (!trans_b)
                kernels::batched_gemm(batch, !trans_a, false, k, n, m, 1.0f, av, gy.data(), 1.0f, gb);
            else
                kernels::batched_gemm(batch, true, trans_a, n, k, m, 1.0f, gy.data(), av, 1.0f, gb);
        }
    });
}

Var softmax_lastdim(Var a)
{
    const int cols = a.dim(-1);
    const std::size_t rows = a.value().size() / cols;
    Tensor y(a.shape());
    kernels::softmax_rows(a.value().data(), y.data(), rows, cols);
    return a.graph().record(std::move(y), {a}, [a, rows, cols](Graph& g, int self) {
        kernels::softmax_rows_backward(g.value(self).data(), g.grad(self).data(), g.grad_accumulator(a.id()).data(),
                                       rows, cols);
    });
}

// --- image ops ----------------------------------------------------------------

Var resample(Var x, std::shared_ptr<const SparseMap> map)
{
    need_rank(x, 4, "resample");
    if (x.dim(2) != map->in_h || x.dim(3) != map->in_w) throw std::invalid_argument("resample: input size mismatch");
    const int planes = x.dim(0) * x.dim(1);
    const std::size_t ip = static_cast<std::size_t>(map->in_h) * map->in_w;
    const std::size_t op = static_cast<std::size_t>(map->out_h) * map->out_w;
    Tensor y({x.dim(0), x.dim(1), map->out_h, map->out_w});
    const Tensor& xv = x.value();
    for (int p = 0; p < planes; ++p)
        for (std::size_t o = 0; o < op; ++o) {
            float s = 0.0f;
            for (int j = map->row_begin[o]; j < map->row_begin[o + 1]; ++j) s += map->weight[j] * xv[p * ip + map->index[j]];
            y[p * op + o] = s;
        }
    return x.graph().record(std::move(y), {x}, [x, map, planes, ip, op](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad_accumulator(x.id());
        for (int p = 0; p < planes; ++p)
            for (std::size_t o = 0; o < op; ++o) {
                const float v = gy[p * op + o];
                for (int j = map->row_begin[o]; j < map->row_begin[o + 1]; ++j) gx[p * ip + map->index[j]] += map->weight[j] * v;
            }
    });
}

Var color_affine(Var x, const std::array<float, 9>& m, const std::array<float, 3>& offset)
{
    need_rank(x, 4, "color_affine");
    if (x.dim(1) != 3) throw std::invalid_argument("color_affine: expected 3 channels");
    const int n = x.dim(0);
    const std::size_t hw = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
    const Tensor& xv = x.value();
    Tensor y(x.shape());
    for (int b = 0; b < n; ++b)
        for (std::size_t i = 0; i < hw; ++i) {
            const float r = xv[(b * 3 + 0) * hw + i], gg = xv[(b * 3 + 1) * hw + i], bb = xv[(b * 3 + 2) * hw + i];
            for (int c = 0; c < 3; ++c) y[(b * 3 + c) * hw + i] = m[c * 3] * r + m[c * 3 + 1] * gg + m[c * 3 + 2] * bb + offset[c];
        }
    return x.graph().record(std::move(y), {x}, [x, m, n, hw](Graph& g, int self) {
        const Tensor& gy = g.grad(self);
        Tensor& gx = g.grad_accumulator(x.id());
        for (int b = 0; b < n; ++b)
            for (std::size_t i = 0; i < hw; ++i)
                for (int k = 0; k < 3; ++k) {
                    float s = 0.0f;
                    for (int c = 0; c < 3; ++c) s += m[c * 3 + k] * gy[(b * 3 + c) * hw + i];
                    gx[(b * 3 + k) * hw + i] += s;
                }
    });
}

Var block_dct8(Var x, bool inverse)
{
    need_rank(x, 4, "block_dct8");
    if (x.dim(2) % 8 || x.dim(3) % 8) throw std::invalid_argument("block_dct8: size must be a multiple of 8");
    Tensor y(x.shape());
    dct_planes(x.value(), y, inverse, false);
    return x.graph().record(std::move(y), {x}, [x, inverse](Graph& g, int self) {
        // The transform is orthonormal, so its adjoint is the opposite direction.
        dct_planes(g.grad(self), g.grad_accumulator(x.id()), !inverse, true);
    });
}

}  // namespace onrw::ag
