#pragma once

// Reference-decoder oracle used by the test suites: wraps libjpeg so every
// recovered or generated file is judged by a stock baseline decoder, not by
// the library under test. A decode counts as clean only when libjpeg
// finishes the whole scan without emitting a single warning (premature end,
// bad restart cadence, extraneous bytes and friends all surface there).

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include <jerror.h>
#include <jpeglib.h>

namespace loti::testing {

struct StockDecode {
    bool ok = false;           // header + full scan decoded
    std::string error;         // libjpeg message when !ok
    long warnings = 0;         // corrupt-data warnings during decode
    int width = 0;
    int height = 0;
    int components = 0;
    unsigned restart_interval = 0;
    long mcu_count = 0;        // MCUs_per_row * MCU_rows_in_scan
    std::vector<std::pair<int, int>> sampling;  // per-component (h, v)
    std::uint64_t pixel_checksum = 0;
};

namespace detail {
struct JmpErrorMgr {
    jpeg_error_mgr base;
    std::jmp_buf jump;
    char message[JMSG_LENGTH_MAX]{};
};

inline void error_exit_thunk(j_common_ptr cinfo) {
    auto* mgr = reinterpret_cast<JmpErrorMgr*>(cinfo->err);
    (*cinfo->err->format_message)(cinfo, mgr->message);
    std::longjmp(mgr->jump, 1);
}

inline void silent_output(j_common_ptr, int) {}
inline void silent_emit(j_common_ptr cinfo, int msg_level) {
    if (msg_level == -1) cinfo->err->num_warnings++;
}
}  // namespace detail

inline StockDecode stock_decode(std::span<const std::uint8_t> bytes, bool full_decode = true) {
    StockDecode out;
    jpeg_decompress_struct cinfo{};
    detail::JmpErrorMgr err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = detail::error_exit_thunk;
    err.base.emit_message = detail::silent_emit;

    std::vector<std::uint8_t> row;
    if (setjmp(err.jump)) {
        out.ok = false;
        out.error = err.message;
        out.warnings = err.base.num_warnings;
        jpeg_destroy_decompress(&cinfo);
        return out;
    }

    jpeg_create_decompress(&cinfo);
    jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
    jpeg_read_header(&cinfo, TRUE);

    out.width = static_cast<int>(cinfo.image_width);
    out.height = static_cast<int>(cinfo.image_height);
    out.components = cinfo.num_components;
    out.restart_interval = cinfo.restart_interval;
    for (int i = 0; i < cinfo.num_components; ++i)
        out.sampling.emplace_back(cinfo.comp_info[i].h_samp_factor, cinfo.comp_info[i].v_samp_factor);

    cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
    jpeg_start_decompress(&cinfo);
    out.mcu_count = static_cast<long>(cinfo.MCUs_per_row) * static_cast<long>(cinfo.MCU_rows_in_scan);

    if (full_decode) {
        row.resize(static_cast<std::size_t>(cinfo.output_width) * cinfo.output_components);
        std::uint64_t sum = 1469598103934665603ull;
        while (cinfo.output_scanline < cinfo.output_height) {
            JSAMPROW rows[1] = {row.data()};
            jpeg_read_scanlines(&cinfo, rows, 1);
            for (std::uint8_t v : row) sum = (sum ^ v) * 1099511628211ull;
        }
        out.pixel_checksum = sum;
        jpeg_finish_decompress(&cinfo);
    } else {
        jpeg_abort_decompress(&cinfo);
    }

    out.warnings = err.base.num_warnings;
    out.ok = true;
    jpeg_destroy_decompress(&cinfo);
    return out;
}

inline StockDecode stock_decode(const std::vector<std::uint8_t>& bytes, bool full_decode = true) {
    return stock_decode(std::span<const std::uint8_t>(bytes.data(), bytes.size()), full_decode);
}

}  // namespace loti::testing
