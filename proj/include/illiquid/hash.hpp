#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace illiquid {

/// 64-bit FNV-1a, fed with raw bytes of trivially copyable values.
struct Fnv1a {
    std::uint64_t h = 1469598103934665603ULL;

    void bytes(const void* data, std::size_t n)
    {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    }
    template <typename T>
    void value(const T& v) { bytes(&v, sizeof(T)); }
    void text(const std::string& s) { bytes(s.data(), s.size()); }
};

/// Fixed-width lowercase hex.
std::string hex64(std::uint64_t h);

} // namespace illiquid
