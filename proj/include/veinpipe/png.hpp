#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "veinpipe/binio.hpp"
#include "veinpipe/image.hpp"

namespace veinpipe {

// Minimal PNG codec: writes 8-bit grayscale and RGB, reads any non-interlaced
// 8-bit gray/RGB/alpha variant (converting to grayscale on demand). Deflate is
// zlib's; chunk framing, filtering, and unfiltering live here.

namespace pngdetail {

inline void put_u32_be(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>((v >> 24) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>(v & 0xff));
}

inline void write_chunk(std::string& out, const char type[4], const std::string& data) {
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    const std::size_t start = out.size();
    out.append(type, 4);
    out.append(data);
    const auto crc =
        ::crc32(0, reinterpret_cast<const Bytef*>(out.data() + start), static_cast<uInt>(4 + data.size()));
    put_u32_be(out, static_cast<std::uint32_t>(crc));
}

inline std::string zlib_compress(const std::string& raw) {
    uLongf bound = ::compressBound(static_cast<uLong>(raw.size()));
    std::string out(bound, '\0');
    if (::compress2(reinterpret_cast<Bytef*>(out.data()), &bound,
                    reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()),
                    Z_DEFAULT_COMPRESSION) != Z_OK)
        throw std::runtime_error("png: deflate failed");
    out.resize(bound);
    return out;
}

inline std::string encode(const std::uint8_t* pixels, int width, int height, int channels) {
    std::string raw;
    raw.reserve(static_cast<std::size_t>(height) * (static_cast<std::size_t>(width) * channels + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back('\0');  // filter type 0 (None)
        raw.append(reinterpret_cast<const char*>(pixels + static_cast<std::size_t>(y) * width * channels),
                   static_cast<std::size_t>(width) * channels);
    }
    std::string ihdr;
    put_u32_be(ihdr, static_cast<std::uint32_t>(width));
    put_u32_be(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(channels == 1 ? 0 : 2);               // color type: gray / RGB
    ihdr.push_back(0);                                   // compression
    ihdr.push_back(0);                                   // filter method
    ihdr.push_back(0);                                   // no interlace

    std::string out("\x89PNG\r\n\x1a\n", 8);
    write_chunk(out, "IHDR", ihdr);
    write_chunk(out, "IDAT", zlib_compress(raw));
    write_chunk(out, "IEND", "");
    return out;
}

inline std::uint32_t get_u32_be(const unsigned char* p) {
    return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
           (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

inline int paeth(int a, int b, int c) {
    const int p = a + b - c;
    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
    if (pa <= pb && pa <= pc) return a;
    if (pb <= pc) return b;
    return c;
}

struct Decoded {
    int width = 0, height = 0, channels = 0;
    std::vector<std::uint8_t> pixels;  // interleaved
};

inline Decoded decode(const std::vector<char>& file, const std::string& source) {
    const auto* p = reinterpret_cast<const unsigned char*>(file.data());
    const std::size_t n = file.size();
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (n < 8 || std::memcmp(p, sig, 8) != 0)
        throw std::runtime_error("not a PNG file: " + source);

    int width = 0, height = 0, bit_depth = 0, color_type = 0, interlace = 0;
    std::string idat;
    std::size_t pos = 8;
    bool saw_iend = false;
    while (pos + 8 <= n) {
        const std::uint32_t len = get_u32_be(p + pos);
        if (pos + 12 + len > n) throw std::runtime_error("truncated PNG chunk in " + source);
        const char* type = reinterpret_cast<const char*>(p + pos + 4);
        const unsigned char* data = p + pos + 8;
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw std::runtime_error("bad IHDR in " + source);
            width = static_cast<int>(get_u32_be(data));
            height = static_cast<int>(get_u32_be(data + 4));
            bit_depth = data[8];
            color_type = data[9];
            interlace = data[12];
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.append(reinterpret_cast<const char*>(data), len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            saw_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (width <= 0 || height <= 0) throw std::runtime_error("PNG missing IHDR: " + source);
    if (!saw_iend) throw std::runtime_error("truncated PNG (no IEND): " + source);
    if (bit_depth != 8) throw std::runtime_error("unsupported PNG bit depth in " + source);
    if (interlace != 0) throw std::runtime_error("interlaced PNG unsupported: " + source);
    int channels = 0;
    switch (color_type) {
        case 0: channels = 1; break;
        case 2: channels = 3; break;
        case 4: channels = 2; break;
        case 6: channels = 4; break;
        default: throw std::runtime_error("unsupported PNG color type in " + source);
    }

    const std::size_t stride = static_cast<std::size_t>(width) * channels;
    std::vector<std::uint8_t> raw(static_cast<std::size_t>(height) * (stride + 1));
    uLongf raw_len = static_cast<uLongf>(raw.size());
    if (::uncompress(raw.data(), &raw_len, reinterpret_cast<const Bytef*>(idat.data()),
                     static_cast<uLong>(idat.size())) != Z_OK ||
        raw_len != raw.size())
        throw std::runtime_error("corrupt PNG pixel data in " + source);

    Decoded out;
    out.width = width;
    out.height = height;
    out.channels = channels;
    out.pixels.assign(static_cast<std::size_t>(height) * stride, 0);
    std::vector<std::uint8_t> prev(stride, 0);
    for (int y = 0; y < height; ++y) {
        const std::uint8_t filter = raw[static_cast<std::size_t>(y) * (stride + 1)];
        const std::uint8_t* src = &raw[static_cast<std::size_t>(y) * (stride + 1) + 1];
        std::uint8_t* dst = &out.pixels[static_cast<std::size_t>(y) * stride];
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= static_cast<std::size_t>(channels) ? dst[i - channels] : 0;
            const int b = prev[i];
            const int c = i >= static_cast<std::size_t>(channels) ? prev[i - channels] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: v += paeth(a, b, c); break;
                default: throw std::runtime_error("bad PNG filter type in " + source);
            }
            dst[i] = static_cast<std::uint8_t>(v & 0xff);
        }
        std::memcpy(prev.data(), dst, stride);
    }
    return out;
}

}  // namespace pngdetail

inline std::string encode_gray_png(const GrayImage& img) {
    return pngdetail::encode(img.pixels.data(), img.width, img.height, 1);
}

inline std::string encode_rgb_png(const RgbImage& img) {
    return pngdetail::encode(img.pixels.data(), img.width, img.height, 3);
}

inline void write_gray_png(const GrayImage& img, const std::filesystem::path& path) {
    binio::atomic_write_file(path, encode_gray_png(img));
}

inline void write_rgb_png(const RgbImage& img, const std::filesystem::path& path) {
    binio::atomic_write_file(path, encode_rgb_png(img));
}

inline GrayImage read_gray_png(const std::filesystem::path& path) {
    const auto d = pngdetail::decode(binio::read_file(path), path.string());
    GrayImage img(d.width, d.height);
    if (d.channels == 1) {
        img.pixels = d.pixels;
    } else {
        for (std::int64_t i = 0; i < img.pixel_count(); ++i) {
            const std::uint8_t* px = &d.pixels[static_cast<std::size_t>(i) * d.channels];
            if (d.channels == 2) {
                img.pixels[static_cast<std::size_t>(i)] = px[0];
            } else {
                // BT.601 integer luma
                img.pixels[static_cast<std::size_t>(i)] =
                    static_cast<std::uint8_t>((77 * px[0] + 150 * px[1] + 29 * px[2] + 128) >> 8);
            }
        }
    }
    return img;
}

inline RgbImage read_rgb_png(const std::filesystem::path& path) {
    const auto d = pngdetail::decode(binio::read_file(path), path.string());
    RgbImage img(d.width, d.height);
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(d.width) * d.height; ++i) {
        const std::uint8_t* px = &d.pixels[static_cast<std::size_t>(i) * d.channels];
        std::uint8_t* dst = &img.pixels[static_cast<std::size_t>(i) * 3];
        if (d.channels >= 3) {
            dst[0] = px[0];
            dst[1] = px[1];
            dst[2] = px[2];
        } else {
            dst[0] = dst[1] = dst[2] = px[0];
        }
    }
    return img;
}

}  // namespace veinpipe
