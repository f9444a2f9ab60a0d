#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace onrw {

/// 64-bit FNV-1a. Used for config hashes, checkpoint digests and seed derivation.
class Fnv1a {
public:
    void update(const void* data, std::size_t bytes)
    {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < bytes; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
    }
    void update(std::string_view s) { update(s.data(), s.size()); }
    std::uint64_t digest() const { return state_; }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view s)
{
    Fnv1a h;
    h.update(s);
    return h.digest();
}

std::string hex64(std::uint64_t v);

/// Digest of a file's bytes; throws if unreadable.
std::uint64_t file_digest(const std::string& path);

}  // namespace onrw
