#include "onrw/tensor.hpp"

#include "onrw/hash.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace onrw {

namespace {

#ifdef __GLIBC__
// Autograd tapes allocate and free many mid-sized buffers per pass. Keeping
// them on the heap instead of fresh mmap pages avoids a page-fault storm.
const bool heap_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    return true;
}();
#endif

}  // namespace

std::string shape_str(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

std::size_t shape_numel(const Shape& shape)
{
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values))
{
    if (data_.size() != shape_numel(shape_))
        throw std::invalid_argument("tensor value count does not match shape " + shape_str(shape_));
}

int Tensor::dim(int axis) const
{
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) throw std::out_of_range("tensor axis out of range");
    return shape_[axis];
}

float& Tensor::at(int n, int c, int h, int w)
{
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

float Tensor::at(int n, int c, int h, int w) const
{
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape_numel(shape) != data_.size())
        throw std::invalid_argument("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

std::uint64_t Tensor::checksum() const
{
    Fnv1a h;
    for (int d : shape_) h.update(&d, sizeof d);
    h.update(data_.data(), data_.size() * sizeof(float));
    return h.digest();
}

bool Tensor::all_finite() const
{
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void require_shape(const Tensor& t, const Shape& expected, const char* what)
{
    if (t.shape() != expected)
        throw std::invalid_argument(std::string(what) + ": expected shape " + shape_str(expected) + ", got " +
                                    shape_str(t.shape()));
}

float max_abs_diff(const Tensor& a, const Tensor& b)
{
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    float m = 0.0f;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace onrw
