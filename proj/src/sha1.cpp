#include "optshift/sha1.hpp"

#include <array>
#include <cstdint>
#include <cstdio>

namespace optshift {

namespace {

inline std::uint32_t rol(std::uint32_t x, int n) { return (x << n) | (x >> (32 - n)); }

}  // namespace

std::string sha1_hex(const std::string& bytes) {
    std::array<std::uint32_t, 5> h = {0x67452301u, 0xEFCDAB89u, 0x98BADCFEu, 0x10325476u,
                                      0xC3D2E1F0u};

    std::string msg = bytes;
    const std::uint64_t bit_len = static_cast<std::uint64_t>(bytes.size()) * 8;
    msg.push_back(static_cast<char>(0x80));
    while (msg.size() % 64 != 56) msg.push_back('\0');
    for (int i = 7; i >= 0; --i) msg.push_back(static_cast<char>((bit_len >> (8 * i)) & 0xFF));

    std::array<std::uint32_t, 80> w{};
    for (std::size_t chunk = 0; chunk < msg.size(); chunk += 64) {
        for (int i = 0; i < 16; ++i) {
            w[i] = (std::uint32_t(std::uint8_t(msg[chunk + 4 * i])) << 24) |
                   (std::uint32_t(std::uint8_t(msg[chunk + 4 * i + 1])) << 16) |
                   (std::uint32_t(std::uint8_t(msg[chunk + 4 * i + 2])) << 8) |
                   std::uint32_t(std::uint8_t(msg[chunk + 4 * i + 3]));
        }
        for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);

        std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4];
        for (int i = 0; i < 80; ++i) {
            std::uint32_t f, k;
            if (i < 20) {
                f = (b & c) | ((~b) & d);
                k = 0x5A827999u;
            } else if (i < 40) {
                f = b ^ c ^ d;
                k = 0x6ED9EBA1u;
            } else if (i < 60) {
                f = (b & c) | (b & d) | (c & d);
                k = 0x8F1BBCDCu;
            } else {
                f = b ^ c ^ d;
                k = 0xCA62C1D6u;
            }
            const std::uint32_t tmp = rol(a, 5) + f + e + k + w[i];
            e = d;
            d = c;
            c = rol(b, 30);
            b = a;
            a = tmp;
        }
        h[0] += a;
        h[1] += b;
        h[2] += c;
        h[3] += d;
        h[4] += e;
    }

    char out[41];
    std::snprintf(out, sizeof(out), "%08x%08x%08x%08x%08x", h[0], h[1], h[2], h[3], h[4]);
    return out;
}

std::string git_blob_hash(const std::string& content) {
    std::string header = "blob " + std::to_string(content.size());
    header.push_back('\0');
    return sha1_hex(header + content);
}

}  // namespace optshift
