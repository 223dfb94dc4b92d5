#pragma once

// Test-side JPEG synthesis: deterministic pixel textures encoded through
// libjpeg. Tests construct exactly the baseline variants they need
// (sampling, quality, restart interval, optimized tables, progressive for
// rejection paths).

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <vector>

#include <jpeglib.h>

namespace loti::testing {

struct XorShift {
    std::uint64_t s;
    explicit XorShift(std::uint64_t seed) : s(seed ? seed : 0x9E3779B97F4A7C15ull) {}
    std::uint64_t next() {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        return s;
    }
    std::uint32_t below(std::uint32_t n) { return static_cast<std::uint32_t>(next() % n); }
    double unit() { return static_cast<double>(next() >> 11) * 0x1p-53; }
};

inline std::uint8_t clamp8(double v) {
    if (v < 0) return 0;
    if (v > 255) return 255;
    return static_cast<std::uint8_t>(v);
}

// Texture families chosen to vary the entropy stream: ramps give near-empty
// MCUs, noise gives long codes, block patterns give EOB-heavy streams.
inline std::vector<std::uint8_t> synthesize_pixels(int w, int h, int comps, XorShift& rng,
                                                   int force_mode = -1) {
    std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * comps);
    int mode = force_mode >= 0 ? force_mode : static_cast<int>(rng.below(4));
    double ax = rng.unit() * 4.0, ay = rng.unit() * 4.0, base = rng.unit() * 255.0;
    double fx = 0.02 + rng.unit() * 0.3, fy = 0.02 + rng.unit() * 0.3;
    std::uint64_t cell_seed = rng.next();
    int cell = 8 << rng.below(2);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < comps; ++c) {
                double v = 0;
                switch (mode) {
                    case 0:
                        v = base + ax * x + ay * y + c * 23.0;
                        break;
                    case 1:
                        v = 128 + 110 * std::sin(fx * x + c) * std::cos(fy * y - c * 0.7);
                        break;
                    case 2: {
                        std::uint64_t s = cell_seed ^ (static_cast<std::uint64_t>(x / cell) * 2654435761u) ^
                                          (static_cast<std::uint64_t>(y / cell) * 40503u) ^
                                          (static_cast<std::uint64_t>(c) * 97u);
                        s ^= s << 13;
                        s ^= s >> 7;
                        s ^= s << 17;
                        v = static_cast<double>(s & 0xFF);
                        break;
                    }
                    case 3:
                        v = base + ((x ^ y) & 0x1F) * 6.0 + 40.0 * std::sin(0.05 * x * c);
                        break;
                    default: {  // per-pixel noise: dense scans, long codes
                        std::uint64_t s = cell_seed ^ (static_cast<std::uint64_t>(x) * 0x9E3779B97F4A7C15ull) ^
                                          (static_cast<std::uint64_t>(y) * 0xC2B2AE3D27D4EB4Full) ^
                                          (static_cast<std::uint64_t>(c) * 0x165667B19E3779F9ull);
                        s ^= s << 13;
                        s ^= s >> 7;
                        s ^= s << 17;
                        v = static_cast<double>(s & 0xFF);
                        break;
                    }
                }
                px[(static_cast<std::size_t>(y) * w + x) * comps + c] = clamp8(v);
            }
        }
    }
    return px;
}

struct EncodeSpec {
    int width = 32;
    int height = 32;
    int components = 3;  // 1 = grayscale
    int quality = 80;
    int h_samp = 2;      // luma sampling for color images
    int v_samp = 2;
    unsigned restart_interval = 0;
    bool optimize = false;
    bool progressive = false;
};

inline std::vector<std::uint8_t> encode_jpeg(const std::vector<std::uint8_t>& px, const EncodeSpec& spec) {
    jpeg_compress_struct cinfo{};
    jpeg_error_mgr jerr{};
    cinfo.err = jpeg_std_error(&jerr);
    jpeg_create_compress(&cinfo);

    unsigned char* buf = nullptr;
    unsigned long size = 0;
    jpeg_mem_dest(&cinfo, &buf, &size);

    cinfo.image_width = static_cast<JDIMENSION>(spec.width);
    cinfo.image_height = static_cast<JDIMENSION>(spec.height);
    cinfo.input_components = spec.components;
    cinfo.in_color_space = spec.components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_set_defaults(&cinfo);
    jpeg_set_quality(&cinfo, spec.quality, TRUE);
    if (spec.components == 3) {
        cinfo.comp_info[0].h_samp_factor = spec.h_samp;
        cinfo.comp_info[0].v_samp_factor = spec.v_samp;
        cinfo.comp_info[1].h_samp_factor = 1;
        cinfo.comp_info[1].v_samp_factor = 1;
        cinfo.comp_info[2].h_samp_factor = 1;
        cinfo.comp_info[2].v_samp_factor = 1;
    }
    cinfo.restart_interval = spec.restart_interval;
    cinfo.optimize_coding = spec.optimize ? TRUE : FALSE;
    if (spec.progressive) jpeg_simple_progression(&cinfo);

    jpeg_start_compress(&cinfo, TRUE);
    std::vector<JSAMPROW> rows(static_cast<std::size_t>(spec.height));
    for (int y = 0; y < spec.height; ++y)
        rows[y] = const_cast<JSAMPROW>(px.data() +
                                       static_cast<std::size_t>(y) * spec.width * spec.components);
    jpeg_write_scanlines(&cinfo, rows.data(), static_cast<JDIMENSION>(spec.height));
    jpeg_finish_compress(&cinfo);

    std::vector<std::uint8_t> out(buf, buf + size);
    jpeg_destroy_compress(&cinfo);
    std::free(buf);
    return out;
}

inline std::vector<std::uint8_t> make_jpeg(const EncodeSpec& spec, std::uint64_t seed,
                                           int texture = -1) {
    XorShift rng(seed);
    auto px = synthesize_pixels(spec.width, spec.height, spec.components, rng, texture);
    return encode_jpeg(px, spec);
}

}  // namespace loti::testing
