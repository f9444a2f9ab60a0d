#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace onrw {

using Shape = std::vector<int>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major float tensor with value semantics.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> values);

    static Tensor scalar(float v) { return Tensor({1}, v); }

    const Shape& shape() const { return shape_; }
    int dim(int axis) const;
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }
    std::vector<float>& storage() { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float& at(int n, int c, int h, int w);
    float at(int n, int c, int h, int w) const;

    Tensor reshaped(Shape shape) const;
    void fill(float v);

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool operator==(const Tensor& other) const = default;

    /// Bitwise FNV-1a digest of shape and contents.
    std::uint64_t checksum() const;
    bool all_finite() const;

private:
    Shape shape_;
    std::vector<float> data_;
};

void require_shape(const Tensor& t, const Shape& expected, const char* what);

float max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace onrw
