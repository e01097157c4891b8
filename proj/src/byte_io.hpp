#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <vector>

namespace uqvol::detail {

// Serializes float32 values as little-endian bytes regardless of host order.
inline std::vector<char> to_le_bytes(std::span<const float> values)
{
    std::vector<char> bytes(values.size() * sizeof(float));
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto bits = std::bit_cast<std::uint32_t>(values[i]);
        if constexpr (std::endian::native == std::endian::big) {
            bits = __builtin_bswap32(bits);
        }
        std::memcpy(bytes.data() + i * sizeof(float), &bits, sizeof(bits));
    }
    return bytes;
}

inline std::vector<float> from_le_bytes(std::span<const char> bytes)
{
    std::vector<float> values(bytes.size() / sizeof(float));
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, bytes.data() + i * sizeof(float), sizeof(bits));
        if constexpr (std::endian::native == std::endian::big) {
            bits = __builtin_bswap32(bits);
        }
        values[i] = std::bit_cast<float>(bits);
    }
    return values;
}

inline void append_u32_le(std::vector<char>& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }
}

inline std::uint32_t read_u32_le(const char* p)
{
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return v;
}

}  // namespace uqvol::detail
