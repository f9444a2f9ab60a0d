#include "onrw/rng.hpp"

#include "onrw/hash.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace onrw {

std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index)
{
    return mix64(master ^ mix64(fnv1a(tag)) ^ mix64(index + 1));
}

std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t file_digest(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    Fnv1a h;
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.digest();
}

float Rng::uniform(float lo, float hi)
{
    std::uniform_real_distribution<float> d(lo, hi);
    return d(engine_);
}

float Rng::normal()
{
    std::normal_distribution<float> d(0.0f, 1.0f);
    return d(engine_);
}

int Rng::uniform_int(int lo, int hi)
{
    std::uniform_int_distribution<int> d(lo, hi);
    return d(engine_);
}

bool Rng::bernoulli(double p)
{
    std::bernoulli_distribution d(p);
    return d(engine_);
}

Tensor Rng::normal_tensor(Shape shape)
{
    Tensor t(std::move(shape));
    std::normal_distribution<float> d(0.0f, 1.0f);
    for (auto& v : t.values()) v = d(engine_);
    return t;
}

Tensor Rng::uniform_tensor(Shape shape, float lo, float hi)
{
    Tensor t(std::move(shape));
    std::uniform_real_distribution<float> d(lo, hi);
    for (auto& v : t.values()) v = d(engine_);
    return t;
}

}  // namespace onrw
