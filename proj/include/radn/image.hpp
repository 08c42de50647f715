// SPDX-License-Identifier: Apache-2.0
//
// Image I/O. Binary PPM (P6) is the canonical lossless format; PNG is
// supported for 8-bit RGB (read and write) with zlib doing the inflate /
// deflate work. Pixels live as f32 in [0,1], interleaved RGB row-major.
#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "radn/common.hpp"

namespace radn {

struct ImageBuffer {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<float> pixels;  // h*w*3, [0,1]

    float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
    float at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * 3 + c];
    }
};

inline ImageBuffer make_image(std::size_t w, std::size_t h) {
    ImageBuffer img;
    img.width = w;
    img.height = h;
    img.pixels.assign(w * h * 3, 0.0f);
    return img;
}

inline std::uint8_t to_byte(float v) {
    const float s = v * 255.0f + 0.5f;
    return static_cast<std::uint8_t>(s < 0.0f ? 0.0f : (s > 255.0f ? 255.0f : s));
}

namespace detail {

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open file: " + path);
    return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
}

inline ImageBuffer from_rgb8(const std::uint8_t* rgb, std::size_t w, std::size_t h) {
    ImageBuffer img = make_image(w, h);
    for (std::size_t i = 0; i < w * h * 3; ++i)
        img.pixels[i] = static_cast<float>(rgb[i]) / 255.0f;
    return img;
}

inline std::uint32_t be32(const std::uint8_t* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

inline ImageBuffer load_png(const std::vector<std::uint8_t>& buf, const std::string& path) {
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    if (buf.size() < 8 || std::memcmp(buf.data(), sig, 8) != 0)
        throw DataError("not a PNG file: " + path);
    std::size_t pos = 8;
    std::size_t w = 0, h = 0;
    int bit_depth = -1, color_type = -1, interlace = -1;
    std::vector<std::uint8_t> idat;
    bool seen_iend = false;
    while (pos + 8 <= buf.size()) {
        const std::uint32_t len = be32(&buf[pos]);
        if (pos + 12 + len > buf.size()) throw DataError("truncated PNG chunk in " + path);
        const char* type = reinterpret_cast<const char*>(&buf[pos + 4]);
        const std::uint8_t* data = &buf[pos + 8];
        if (std::memcmp(type, "IHDR", 4) == 0) {
            if (len != 13) throw DataError("malformed IHDR in " + path);
            w = be32(data);
            h = be32(data + 4);
            bit_depth = data[8];
            color_type = data[9];
            interlace = data[12];
        } else if (std::memcmp(type, "IDAT", 4) == 0) {
            idat.insert(idat.end(), data, data + len);
        } else if (std::memcmp(type, "IEND", 4) == 0) {
            seen_iend = true;
            break;
        }
        pos += 12 + len;
    }
    if (!seen_iend || w == 0 || h == 0) throw DataError("truncated PNG file: " + path);
    if (color_type != 2)
        throw DataError("unsupported PNG color type " + std::to_string(color_type) + " in " + path +
                        " (only 8-bit RGB is supported)");
    if (bit_depth != 8)
        throw DataError("unsupported PNG bit depth " + std::to_string(bit_depth) + " in " + path +
                        " (only 8-bit RGB is supported)");
    if (interlace != 0) throw DataError("interlaced PNG is not supported: " + path);

    const std::size_t stride = w * 3;
    std::vector<std::uint8_t> raw(h * (stride + 1));
    uLongf raw_len = raw.size();
    if (uncompress(raw.data(), &raw_len, idat.data(), idat.size()) != Z_OK ||
        raw_len != raw.size())
        throw DataError("corrupt PNG pixel data in " + path);

    // undo per-row filters (None/Sub/Up/Average/Paeth)
    std::vector<std::uint8_t> rgb(h * stride);
    for (std::size_t y = 0; y < h; ++y) {
        const std::uint8_t filter = raw[y * (stride + 1)];
        const std::uint8_t* src = &raw[y * (stride + 1) + 1];
        std::uint8_t* dst = &rgb[y * stride];
        const std::uint8_t* up = y ? &rgb[(y - 1) * stride] : nullptr;
        for (std::size_t i = 0; i < stride; ++i) {
            const int a = i >= 3 ? dst[i - 3] : 0;
            const int b = up ? up[i] : 0;
            const int c = (up && i >= 3) ? up[i - 3] : 0;
            int v = src[i];
            switch (filter) {
                case 0: break;
                case 1: v += a; break;
                case 2: v += b; break;
                case 3: v += (a + b) / 2; break;
                case 4: {
                    const int p = a + b - c;
                    const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
                    v += (pa <= pb && pa <= pc) ? a : (pb <= pc ? b : c);
                    break;
                }
                default: throw DataError("unknown PNG filter type in " + path);
            }
            dst[i] = static_cast<std::uint8_t>(v & 0xff);
        }
    }
    return from_rgb8(rgb.data(), w, h);
}

inline ImageBuffer load_ppm(const std::vector<std::uint8_t>& buf, const std::string& path) {
    // P6 header: magic, whitespace/comments, width, height, maxval, one ws byte
    std::size_t pos = 2;
    auto skip_ws = [&] {
        while (pos < buf.size()) {
            if (buf[pos] == '#') {
                while (pos < buf.size() && buf[pos] != '\n') ++pos;
            } else if (std::isspace(buf[pos])) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() -> std::size_t {
        skip_ws();
        std::size_t v = 0;
        bool any = false;
        while (pos < buf.size() && std::isdigit(buf[pos])) {
            v = v * 10 + (buf[pos++] - '0');
            any = true;
        }
        if (!any) throw DataError("malformed PPM header in " + path);
        return v;
    };
    const std::size_t w = read_int();
    const std::size_t h = read_int();
    const std::size_t maxval = read_int();
    if (maxval != 255)
        throw DataError("unsupported PPM maxval " + std::to_string(maxval) + " in " + path);
    ++pos;  // single whitespace after maxval
    if (buf.size() < pos + w * h * 3) throw DataError("truncated PPM file: " + path);
    return from_rgb8(&buf[pos], w, h);
}

}  // namespace detail

inline ImageBuffer load_image(const std::string& path) {
    auto buf = detail::read_file(path);
    if (buf.size() >= 2 && buf[0] == 'P' && buf[1] == '6') return detail::load_ppm(buf, path);
    if (buf.size() >= 8 && buf[0] == 0x89 && buf[1] == 'P') return detail::load_png(buf, path);
    throw DataError("unsupported image format (expected PPM P6 or PNG): " + path);
}

inline void save_ppm(const ImageBuffer& img, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write file: " + path);
    f << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<std::uint8_t> bytes(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) bytes[i] = to_byte(img.pixels[i]);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw DataError("write failed: " + path);
}

inline void save_png(const ImageBuffer& img, const std::string& path) {
    const std::size_t w = img.width, h = img.height, stride = w * 3;
    std::vector<std::uint8_t> raw(h * (stride + 1));
    for (std::size_t y = 0; y < h; ++y) {
        raw[y * (stride + 1)] = 0;  // filter: None
        for (std::size_t i = 0; i < stride; ++i)
            raw[y * (stride + 1) + 1 + i] = to_byte(img.pixels[y * stride + i]);
    }
    uLongf comp_cap = compressBound(raw.size());
    std::vector<std::uint8_t> comp(comp_cap);
    if (compress2(comp.data(), &comp_cap, raw.data(), raw.size(), 6) != Z_OK)
        throw DataError("PNG compression failed for " + path);
    comp.resize(comp_cap);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write file: " + path);
    auto put32 = [&](std::uint32_t v) {
        std::uint8_t b[4] = {std::uint8_t(v >> 24), std::uint8_t(v >> 16), std::uint8_t(v >> 8),
                             std::uint8_t(v)};
        f.write(reinterpret_cast<const char*>(b), 4);
    };
    auto chunk = [&](const char* type, const std::uint8_t* data, std::size_t len) {
        put32(static_cast<std::uint32_t>(len));
        f.write(type, 4);
        if (len) f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(len));
        std::uint32_t crc =
            crc32(0, reinterpret_cast<const Bytef*>(type), 4);
        if (len) crc = crc32(crc, data, static_cast<uInt>(len));
        put32(crc);
    };
    static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    f.write(reinterpret_cast<const char*>(sig), 8);
    std::uint8_t ihdr[13] = {std::uint8_t(w >> 24), std::uint8_t(w >> 16), std::uint8_t(w >> 8),
                             std::uint8_t(w),       std::uint8_t(h >> 24), std::uint8_t(h >> 16),
                             std::uint8_t(h >> 8),  std::uint8_t(h),       8, 2, 0, 0, 0};
    chunk("IHDR", ihdr, 13);
    chunk("IDAT", comp.data(), comp.size());
    chunk("IEND", nullptr, 0);
    if (!f) throw DataError("write failed: " + path);
}

inline void save_image(const ImageBuffer& img, const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0)
        save_png(img, path);
    else
        save_ppm(img, path);
}

}  // namespace radn
