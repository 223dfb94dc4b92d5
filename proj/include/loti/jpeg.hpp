#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loti/bitstream.hpp"
#include "loti/error.hpp"

namespace loti {

namespace marker {
inline constexpr std::uint8_t SOI = 0xD8;
inline constexpr std::uint8_t EOI = 0xD9;
inline constexpr std::uint8_t SOF0 = 0xC0;
inline constexpr std::uint8_t DHT = 0xC4;
inline constexpr std::uint8_t DAC = 0xCC;
inline constexpr std::uint8_t SOS = 0xDA;
inline constexpr std::uint8_t DQT = 0xDB;
inline constexpr std::uint8_t DRI = 0xDD;
inline constexpr std::uint8_t RST0 = 0xD0;
inline constexpr std::uint8_t RST7 = 0xD7;
inline constexpr std::uint8_t APP0 = 0xE0;
inline constexpr std::uint8_t COM = 0xFE;
}  // namespace marker

// Canonical Huffman table (T.81 annex C/F). Decode uses the mincode/maxcode
// walk; the encode direction is only needed to emit recovery MCUs.
struct HuffmanTable {
    std::array<std::uint8_t, 17> counts{};  // counts[1..16]
    std::vector<std::uint8_t> symbols;
    bool present = false;

    void build() {
        std::int32_t code = 0;
        std::size_t k = 0;
        for (int len = 1; len <= 16; ++len) {
            valptr_[len] = static_cast<std::int32_t>(k);
            mincode_[len] = code;
            code += counts[len];
            k += counts[len];
            if (code > (1 << len))
                throw Error("overfull Huffman code space");
            maxcode_[len] = counts[len] ? code - 1 : -1;
            code <<= 1;
        }
        if (k != symbols.size())
            throw Error("Huffman symbol count mismatch");
        present = true;
    }

    int decode(ScanBitReader& r) const {
        std::int32_t code = r.read_bit();
        int len = 1;
        while (code > maxcode_[len]) {
            if (++len > 16)
                throw CorruptScan("invalid Huffman code", r.context_mcu, r.bit_offset());
            code = (code << 1) | r.read_bit();
        }
        return symbols[static_cast<std::size_t>(valptr_[len] + code - mincode_[len])];
    }

    // Canonical (code, length) for a symbol; false if the table lacks it.
    bool code_for(std::uint8_t symbol, std::uint32_t& code_out, int& len_out) const {
        std::uint32_t code = 0;
        std::size_t k = 0;
        for (int len = 1; len <= 16; ++len) {
            for (int i = 0; i < counts[len]; ++i, ++k, ++code) {
                if (symbols[k] == symbol) {
                    code_out = code;
                    len_out = len;
                    return true;
                }
            }
            code <<= 1;
        }
        return false;
    }

private:
    std::array<std::int32_t, 17> mincode_{};
    std::array<std::int32_t, 17> maxcode_{};
    std::array<std::int32_t, 17> valptr_{};
};

struct Component {
    std::uint8_t id = 0;
    std::uint8_t h_sampling = 1;
    std::uint8_t v_sampling = 1;
    std::uint8_t quant_table_id = 0;
    std::uint8_t dc_table_id = 0;  // from SOS
    std::uint8_t ac_table_id = 0;
};

struct ByteRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

struct JpegImage {
    std::vector<std::uint8_t> raw_bytes;
    ByteRange header_span;  // SOI through SOS payload inclusive
    ByteRange scan_span;    // entropy-coded data, EOI excluded
    std::uint16_t width = 0;
    std::uint16_t height = 0;
    std::vector<Component> components;
    std::array<HuffmanTable, 4> dc_tables;
    std::array<HuffmanTable, 4> ac_tables;
    std::uint32_t restart_interval = 0;  // MCUs between RST markers, 0 = none
    std::uint32_t mcu_count_expected = 0;
    std::uint8_t h_max = 1;
    std::uint8_t v_max = 1;

    std::span<const std::uint8_t> header_bytes() const {
        return {raw_bytes.data() + header_span.begin, header_span.size()};
    }
    std::span<const std::uint8_t> scan_bytes() const {
        return {raw_bytes.data() + scan_span.begin, scan_span.size()};
    }
    // EOI marker plus anything after it.
    std::span<const std::uint8_t> trailer_bytes() const {
        return {raw_bytes.data() + scan_span.end, raw_bytes.size() - scan_span.end};
    }

    // Data units per MCU. A single-component scan uses one block per MCU.
    std::size_t blocks_per_mcu() const {
        if (components.size() == 1) return 1;
        std::size_t n = 0;
        for (const auto& c : components) n += std::size_t{c.h_sampling} * c.v_sampling;
        return n;
    }
};

// Per-MCU bit boundaries inside the scan. Offsets are raw (byte stuffing
// included) but never point inside a stuffed 0x00. An MCU whose end is
// followed by a restart marker counts the pad bits and marker as part of its
// extent, so restart ends are always byte-aligned.
struct McuMap {
    std::vector<std::uint64_t> boundaries;  // bit offset where each MCU's code begins
    std::uint64_t end_bit = 0;              // one past the last MCU's code (pad excluded)
    std::vector<bool> byte_aligned;         // MCU end lands on a byte boundary
    std::vector<bool> restart_after;        // MCU end is a restart-marker boundary
};

struct McuBlock {
    std::uint32_t start_mcu = 0;
    std::uint32_t end_mcu = 0;  // inclusive
    ByteRange bytes;            // relative to scan start
};

struct McuBlockPlan {
    std::vector<McuBlock> blocks;
    bool recoverable = false;
};

namespace detail {

class ByteCursor {
public:
    ByteCursor(std::span<const std::uint8_t> data, std::size_t pos) : data_(data), pos_(pos) {}

    std::size_t pos() const { return pos_; }
    bool at_end() const { return pos_ >= data_.size(); }

    std::uint8_t u8() {
        if (pos_ >= data_.size()) throw TruncatedFile("unexpected end of file", pos_);
        return data_[pos_++];
    }

    std::uint16_t u16() {
        std::uint16_t hi = u8();
        return static_cast<std::uint16_t>((hi << 8) | u8());
    }

    void skip(std::size_t n) {
        if (pos_ + n > data_.size()) throw TruncatedFile("unexpected end of file", data_.size());
        pos_ += n;
    }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_;
};

// Parses the segment stream from SOI up to and including the SOS payload.
// Returns the image with header_span set; scan_span.begin points at the
// first entropy-coded byte and scan_span.end is left equal to begin.
inline JpegImage parse_segments(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 0xFF || bytes[1] != marker::SOI)
        throw MalformedMarker("expected SOI", bytes.size() >= 2 ? bytes[1] : 0, 0);

    JpegImage img;
    ByteCursor cur(bytes, 2);
    bool saw_sof = false;

    for (;;) {
        std::size_t marker_at = cur.pos();
        std::uint8_t ff = cur.u8();
        if (ff != 0xFF)
            throw MalformedMarker("expected marker", ff, marker_at);
        std::uint8_t m = cur.u8();
        while (m == 0xFF) m = cur.u8();  // fill bytes

        if (m == marker::SOF0) {
            std::size_t seg_at = cur.pos();
            std::uint16_t len = cur.u16();
            if (len < 8) throw MalformedMarker("SOF0 segment too short", m, seg_at);
            std::uint8_t precision = cur.u8();
            if (precision != 8)
                throw NotBaseline("unsupported sample precision " + std::to_string(precision));
            img.height = cur.u16();
            img.width = cur.u16();
            std::uint8_t nf = cur.u8();
            if (img.width == 0 || img.height == 0)
                throw MalformedMarker("zero image dimension", m, seg_at);
            if (nf == 0 || nf > 4)
                throw MalformedMarker("unsupported component count", m, seg_at);
            for (int i = 0; i < nf; ++i) {
                Component c;
                c.id = cur.u8();
                std::uint8_t hv = cur.u8();
                c.h_sampling = hv >> 4;
                c.v_sampling = hv & 0xF;
                c.quant_table_id = cur.u8();
                if (c.h_sampling < 1 || c.h_sampling > 4 || c.v_sampling < 1 || c.v_sampling > 4)
                    throw MalformedMarker("invalid sampling factors", m, seg_at);
                img.components.push_back(c);
            }
            saw_sof = true;
        } else if ((m >= 0xC1 && m <= 0xCF && m != marker::DHT && m != 0xC8) || m == marker::DAC) {
            // Progressive, extended sequential, lossless, hierarchical or
            // arithmetic coded frames.
            throw NotBaseline("frame type 0xFF" + std::to_string(m) +
                              " is not baseline sequential (offset " + std::to_string(marker_at) + ")");
        } else if (m == marker::DHT) {
            std::size_t seg_at = cur.pos();
            std::uint16_t len = cur.u16();
            std::size_t seg_end = seg_at + len;
            while (cur.pos() < seg_end) {
                std::uint8_t tc_th = cur.u8();
                std::uint8_t tc = tc_th >> 4;
                std::uint8_t th = tc_th & 0xF;
                if (tc > 1 || th > 3)
                    throw MalformedMarker("invalid Huffman table class/id", m, seg_at);
                HuffmanTable t;
                std::size_t total = 0;
                for (int i = 1; i <= 16; ++i) {
                    t.counts[i] = cur.u8();
                    total += t.counts[i];
                }
                if (total > 256) throw MalformedMarker("Huffman table too large", m, seg_at);
                t.symbols.resize(total);
                for (std::size_t i = 0; i < total; ++i) t.symbols[i] = cur.u8();
                try {
                    t.build();
                } catch (const Error& e) {
                    throw MalformedMarker(e.what(), m, seg_at);
                }
                (tc == 0 ? img.dc_tables : img.ac_tables)[th] = std::move(t);
            }
            if (cur.pos() != seg_end)
                throw MalformedMarker("DHT length mismatch", m, seg_at);
        } else if (m == marker::DRI) {
            std::size_t seg_at = cur.pos();
            std::uint16_t len = cur.u16();
            if (len != 4) throw MalformedMarker("bad DRI length", m, seg_at);
            img.restart_interval = cur.u16();
        } else if (m == marker::SOS) {
            std::size_t seg_at = cur.pos();
            cur.u16();  // length, implied by Ns
            if (!saw_sof) throw MalformedMarker("SOS before SOF0", m, seg_at);
            std::uint8_t ns = cur.u8();
            if (ns != img.components.size())
                throw NotBaseline("non-interleaved or multi-scan image");
            for (int i = 0; i < ns; ++i) {
                std::uint8_t cs = cur.u8();
                std::uint8_t td_ta = cur.u8();
                bool matched = false;
                for (auto& c : img.components) {
                    if (c.id == cs) {
                        c.dc_table_id = td_ta >> 4;
                        c.ac_table_id = td_ta & 0xF;
                        if (c.dc_table_id > 3 || c.ac_table_id > 3)
                            throw MalformedMarker("invalid table selector", m, seg_at);
                        if (!img.dc_tables[c.dc_table_id].present || !img.ac_tables[c.ac_table_id].present)
                            throw MalformedMarker("scan references missing Huffman table", m, seg_at);
                        matched = true;
                        break;
                    }
                }
                if (!matched) throw MalformedMarker("SOS names unknown component", m, seg_at);
            }
            cur.skip(3);  // Ss, Se, Ah/Al — fixed for baseline
            img.header_span = {0, cur.pos()};
            img.scan_span = {cur.pos(), cur.pos()};
            break;
        } else if (m == marker::EOI) {
            throw TruncatedFile("EOI before any scan", marker_at);
        } else if (m == marker::SOI || (m >= marker::RST0 && m <= marker::RST7) || m == 0x01) {
            throw MalformedMarker("unexpected standalone marker", m, marker_at);
        } else {
            // APPn, COM, DQT, DNL and anything else with a length field.
            std::size_t seg_at = cur.pos();
            std::uint16_t len = cur.u16();
            if (len < 2) throw MalformedMarker("bad segment length", m, seg_at);
            cur.skip(len - 2);
        }
    }

    for (const auto& c : img.components) {
        img.h_max = std::max(img.h_max, c.h_sampling);
        img.v_max = std::max(img.v_max, c.v_sampling);
    }
    std::uint32_t mcu_w = 8, mcu_h = 8;
    if (img.components.size() > 1) {
        mcu_w = 8u * img.h_max;
        mcu_h = 8u * img.v_max;
    }
    std::uint32_t mcus_x = (img.width + mcu_w - 1) / mcu_w;
    std::uint32_t mcus_y = (img.height + mcu_h - 1) / mcu_h;
    img.mcu_count_expected = mcus_x * mcus_y;
    return img;
}

// One entropy-coded 8x8 block: DC symbol + magnitude bits, then AC symbols
// until EOB or coefficient 63. Only the bit extent matters here.
inline void skip_block(ScanBitReader& r, const HuffmanTable& dc, const HuffmanTable& ac) {
    int s = dc.decode(r);
    if (s > 11)
        throw CorruptScan("invalid DC category", r.context_mcu, r.bit_offset());
    if (s) r.read_bits(s);
    int k = 1;
    while (k <= 63) {
        int rs = ac.decode(r);
        int run = rs >> 4;
        int size = rs & 0xF;
        if (size == 0) {
            if (run == 15) {
                k += 16;
                continue;
            }
            break;  // EOB
        }
        if (size > 10)
            throw CorruptScan("invalid AC category", r.context_mcu, r.bit_offset());
        k += run;
        if (k > 63)
            throw CorruptScan("AC run past block end", r.context_mcu, r.bit_offset());
        r.read_bits(size);
        ++k;
    }
}

inline void skip_mcu(ScanBitReader& r, const JpegImage& img) {
    if (img.components.size() == 1) {
        const auto& c = img.components[0];
        skip_block(r, img.dc_tables[c.dc_table_id], img.ac_tables[c.ac_table_id]);
        return;
    }
    for (const auto& c : img.components) {
        int blocks = c.h_sampling * c.v_sampling;
        for (int i = 0; i < blocks; ++i)
            skip_block(r, img.dc_tables[c.dc_table_id], img.ac_tables[c.ac_table_id]);
    }
}

}  // namespace detail

// Parse a complete baseline JPEG file. The scan itself is not entropy
// decoded here; scan_span is found by locating the first real marker after
// SOS (stuffing bytes and RSTn are not markers for this purpose).
inline JpegImage parse_jpeg(std::span<const std::uint8_t> bytes) {
    JpegImage img = detail::parse_segments(bytes);
    img.raw_bytes.assign(bytes.begin(), bytes.end());

    std::size_t i = img.scan_span.begin;
    std::size_t scan_end = bytes.size();
    bool terminated = false;
    while (i + 1 < bytes.size()) {
        if (bytes[i] != 0xFF) {
            ++i;
            continue;
        }
        std::uint8_t next = bytes[i + 1];
        if (next == 0x00 || (next >= marker::RST0 && next <= marker::RST7)) {
            i += 2;
            continue;
        }
        if (next == marker::SOS)
            throw NotBaseline("non-interleaved or multi-scan image");
        scan_end = i;
        terminated = true;
        break;
    }
    if (!terminated)
        throw TruncatedFile("scan has no terminating marker", bytes.size());
    img.scan_span.end = scan_end;
    return img;
}

inline JpegImage parse_jpeg(const std::vector<std::uint8_t>& bytes) {
    return parse_jpeg(std::span<const std::uint8_t>(bytes.data(), bytes.size()));
}

// Parse only SOI..SOS; used when the entropy data is partial or missing
// (for example on the receive side before reassembly completes).
inline JpegImage parse_jpeg_header(std::span<const std::uint8_t> header) {
    JpegImage img = detail::parse_segments(header);
    img.raw_bytes.assign(header.begin(), header.begin() + static_cast<std::ptrdiff_t>(img.header_span.end));
    img.scan_span = {img.header_span.end, img.header_span.end};
    return img;
}

// Entropy-decode the scan far enough to find every MCU's bit extent.
// Restart markers reset nothing we track (DC predictors do not affect code
// lengths) but must appear on their interval cadence.
inline McuMap scan_mcu_boundaries(const JpegImage& img) {
    McuMap map;
    const std::uint32_t n = img.mcu_count_expected;
    map.boundaries.reserve(n);
    ScanBitReader r(img.scan_bytes());

    for (std::uint32_t m = 0; m < n; ++m) {
        r.context_mcu = m;
        if (img.restart_interval && m > 0 && m % img.restart_interval == 0) {
            r.skip_to_byte();
            r.take_restart();
            map.restart_after[m - 1] = true;
        }
        map.boundaries.push_back(r.bit_offset());
        map.restart_after.push_back(false);
        detail::skip_mcu(r, img);
    }
    map.end_bit = r.bit_offset();
    r.skip_to_byte();  // pad bits; a 0xFF pad byte drags its stuffing 0x00 along
    if (r.bytes_left() != 0)
        throw CorruptScan("trailing data after final MCU", n ? n - 1 : 0, r.bit_offset());

    map.byte_aligned.resize(n);
    for (std::uint32_t m = 0; m < n; ++m) {
        std::uint64_t end = (m + 1 < n) ? map.boundaries[m + 1] : map.end_bit;
        map.byte_aligned[m] = (end % 8 == 0);
    }
    return map;
}

// Greedy block planner: grow until the block is at least target_block_bytes
// AND ends at a byte-aligned MCU, looking at most max_scan MCUs past the
// size target. Images with a restart interval split only at restart
// boundaries so the RSTn cadence survives whole-block removal. Failure to
// split folds into a single unrecoverable block.
inline McuBlockPlan plan_mcu_blocks(const JpegImage& img, const McuMap& map,
                                    std::uint32_t max_scan = 64,
                                    std::size_t target_block_bytes = 1024) {
    McuBlockPlan plan;
    const std::size_t n = map.boundaries.size();
    const std::size_t scan_size = img.scan_span.size();
    if (n == 0) return plan;

    auto end_byte = [&](std::size_t m) -> std::size_t {
        return (m + 1 < n) ? static_cast<std::size_t>(map.boundaries[m + 1] / 8) : scan_size;
    };
    auto splittable = [&](std::size_t m) -> bool {
        if (m + 1 == n) return true;  // scan end closes the final block
        return img.restart_interval ? map.restart_after[m] : map.byte_aligned[m];
    };

    std::size_t start_mcu = 0;
    std::size_t start_byte = 0;
    while (start_mcu < n) {
        std::size_t m = start_mcu;
        while (m + 1 < n && end_byte(m) - start_byte < target_block_bytes) ++m;
        std::size_t window_end = m + max_scan;
        while (!splittable(m)) {
            if (m >= window_end) {
                plan.blocks.clear();
                plan.blocks.push_back({0, static_cast<std::uint32_t>(n - 1), {0, scan_size}});
                plan.recoverable = false;
                return plan;
            }
            ++m;
        }
        plan.blocks.push_back({static_cast<std::uint32_t>(start_mcu), static_cast<std::uint32_t>(m),
                               {start_byte, end_byte(m)}});
        start_mcu = m + 1;
        start_byte = end_byte(m);
    }
    plan.recoverable = plan.blocks.size() >= 2;
    if (!plan.recoverable) {
        plan.blocks.front().bytes = {0, scan_size};
    }
    return plan;
}

}  // namespace loti
