#pragma once

#include "onrw/tensor.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace onrw {

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Sub-seed derivation: every stochastic consumer gets
/// mix64(master ^ mix64(fnv1a(tag)) ^ mix64(index + 1)).
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index = 0);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    float uniform(float lo = 0.0f, float hi = 1.0f);
    float normal();
    int uniform_int(int lo, int hi);  // inclusive bounds
    bool bernoulli(double p);

    Tensor normal_tensor(Shape shape);
    Tensor uniform_tensor(Shape shape, float lo, float hi);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace onrw
