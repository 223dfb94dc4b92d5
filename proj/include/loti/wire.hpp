#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "loti/error.hpp"
#include "loti/jpeg.hpp"

namespace loti {

inline constexpr std::uint16_t kWireMagic = 0xD1AE;
inline constexpr std::uint8_t kWireVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 26;
inline constexpr std::uint32_t kMcuSentinel = 0xFFFFFFFF;
inline constexpr std::size_t kMinMtuPayload = 64;

enum class MsgType : std::uint8_t { Data = 0, Result = 1, Cancel = 2 };

// Fixed 26-byte big-endian packet header:
//   0-1  magic 0xD1AE        2  version        3  msg_type
//   4    flags (bit0 is_jpeg_header, bit1 is_last, bit2 has_next_partition,
//               bit3 recoverable, bits 4-7 zero)
//   5-8  request_id          9-12 start_mcu    13-16 end_mcu
//   17-20 block_num          21 partition_num  22 partition_idx
//   23   reserved(0)         24-25 payload_len 26.. payload
struct PacketHeader {
    MsgType msg_type = MsgType::Data;
    bool is_jpeg_header = false;
    bool is_last = false;
    bool has_next_partition = false;
    bool recoverable = false;
    std::uint32_t request_id = 0;
    std::uint32_t start_mcu = 0;
    std::uint32_t end_mcu = 0;
    std::uint32_t block_num = 0;
    std::uint8_t partition_num = 1;
    std::uint8_t partition_idx = 0;
    std::uint16_t payload_len = 0;

    bool operator==(const PacketHeader&) const = default;
};

inline void validate_header(const PacketHeader& h) {
    if (h.partition_num < 1)
        throw InvariantViolation("partition_num must be >= 1");
    if (h.partition_idx >= h.partition_num)
        throw InvariantViolation("partition_idx must be < partition_num");
    if (h.is_jpeg_header) {
        if (h.block_num != 0)
            throw InvariantViolation("jpeg-header packets carry block_num 0");
        if (h.start_mcu != kMcuSentinel || h.end_mcu != kMcuSentinel)
            throw InvariantViolation("jpeg-header packets carry MCU sentinels");
    } else if (h.msg_type == MsgType::Data) {
        if (h.start_mcu > h.end_mcu)
            throw InvariantViolation("start_mcu must not exceed end_mcu");
    }
    if (h.msg_type == MsgType::Cancel && h.payload_len != 0)
        throw InvariantViolation("cancel packets carry no payload");
}

inline std::array<std::uint8_t, kHeaderSize> encode_header(const PacketHeader& h) {
    validate_header(h);
    std::array<std::uint8_t, kHeaderSize> b{};
    auto put16 = [&](std::size_t at, std::uint16_t v) {
        b[at] = static_cast<std::uint8_t>(v >> 8);
        b[at + 1] = static_cast<std::uint8_t>(v);
    };
    auto put32 = [&](std::size_t at, std::uint32_t v) {
        b[at] = static_cast<std::uint8_t>(v >> 24);
        b[at + 1] = static_cast<std::uint8_t>(v >> 16);
        b[at + 2] = static_cast<std::uint8_t>(v >> 8);
        b[at + 3] = static_cast<std::uint8_t>(v);
    };
    put16(0, kWireMagic);
    b[2] = kWireVersion;
    b[3] = static_cast<std::uint8_t>(h.msg_type);
    b[4] = static_cast<std::uint8_t>((h.is_jpeg_header ? 1 : 0) | (h.is_last ? 2 : 0) |
                                     (h.has_next_partition ? 4 : 0) | (h.recoverable ? 8 : 0));
    put32(5, h.request_id);
    put32(9, h.start_mcu);
    put32(13, h.end_mcu);
    put32(17, h.block_num);
    b[21] = h.partition_num;
    b[22] = h.partition_idx;
    b[23] = 0;
    put16(24, h.payload_len);
    return b;
}

inline PacketHeader decode_header(std::span<const std::uint8_t> b) {
    if (b.size() < kHeaderSize)
        throw InvariantViolation("buffer shorter than packet header");
    auto get16 = [&](std::size_t at) -> std::uint16_t {
        return static_cast<std::uint16_t>((b[at] << 8) | b[at + 1]);
    };
    auto get32 = [&](std::size_t at) -> std::uint32_t {
        return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
               (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
    };
    if (get16(0) != kWireMagic)
        throw BadMagic("bad magic 0x" + std::to_string(get16(0)));
    if (b[2] != kWireVersion)
        throw UnsupportedVersion("unsupported protocol version " + std::to_string(b[2]));
    if (b[3] > 2)
        throw InvariantViolation("unknown msg_type");
    if (b[4] & 0xF0)
        throw InvariantViolation("reserved flag bits set");
    if (b[23] != 0)
        throw InvariantViolation("reserved byte set");

    PacketHeader h;
    h.msg_type = static_cast<MsgType>(b[3]);
    h.is_jpeg_header = b[4] & 1;
    h.is_last = b[4] & 2;
    h.has_next_partition = b[4] & 4;
    h.recoverable = b[4] & 8;
    h.request_id = get32(5);
    h.start_mcu = get32(9);
    h.end_mcu = get32(13);
    h.block_num = get32(17);
    h.partition_num = b[21];
    h.partition_idx = b[22];
    h.payload_len = get16(24);
    validate_header(h);
    return h;
}

struct Datagram {
    PacketHeader header;
    std::vector<std::uint8_t> payload;

    std::vector<std::uint8_t> to_bytes() const {
        auto hb = encode_header(header);
        std::vector<std::uint8_t> out(hb.begin(), hb.end());
        out.insert(out.end(), payload.begin(), payload.end());
        return out;
    }

    static Datagram from_bytes(std::span<const std::uint8_t> bytes) {
        Datagram d;
        d.header = decode_header(bytes);
        if (bytes.size() != kHeaderSize + d.header.payload_len)
            throw InvariantViolation("payload length does not match datagram size");
        d.payload.assign(bytes.begin() + kHeaderSize, bytes.end());
        return d;
    }
};

struct RequestDatagramSet {
    std::uint32_t request_id = 0;
    std::vector<Datagram> packets;  // JPEG header packets first, then blocks in order
};

// Split the file into datagrams: the JPEG header (SOI..SOS payload) goes out
// first, then every MCU block packed into as few packets as possible. The
// final block also carries the trailer (EOI and anything after it) so a
// zero-loss reassembly is byte-identical.
inline RequestDatagramSet build_packets(const JpegImage& img, const McuBlockPlan& plan,
                                        std::uint32_t request_id, std::size_t mtu_payload = 1200) {
    if (mtu_payload < kMinMtuPayload || mtu_payload > 0xFFFF)
        throw PayloadOverflow("mtu_payload must be in [64, 65535]");

    RequestDatagramSet set;
    set.request_id = request_id;

    auto split = [&](std::span<const std::uint8_t> bytes) {
        std::vector<std::span<const std::uint8_t>> parts;
        for (std::size_t at = 0; at < bytes.size(); at += mtu_payload)
            parts.push_back(bytes.subspan(at, std::min(mtu_payload, bytes.size() - at)));
        if (parts.empty()) parts.push_back(bytes.subspan(0, 0));
        return parts;
    };

    auto header_parts = split(img.header_bytes());
    if (header_parts.size() > 255)
        throw HeaderTooLarge("JPEG header needs " + std::to_string(header_parts.size()) + " partitions");
    for (std::size_t i = 0; i < header_parts.size(); ++i) {
        Datagram d;
        d.header.msg_type = MsgType::Data;
        d.header.is_jpeg_header = true;
        d.header.recoverable = plan.recoverable;
        d.header.request_id = request_id;
        d.header.start_mcu = kMcuSentinel;
        d.header.end_mcu = kMcuSentinel;
        d.header.block_num = 0;
        d.header.partition_num = static_cast<std::uint8_t>(header_parts.size());
        d.header.partition_idx = static_cast<std::uint8_t>(i);
        d.header.has_next_partition = i + 1 < header_parts.size();
        d.header.payload_len = static_cast<std::uint16_t>(header_parts[i].size());
        d.payload.assign(header_parts[i].begin(), header_parts[i].end());
        set.packets.push_back(std::move(d));
    }

    auto scan = img.scan_bytes();
    auto trailer = img.trailer_bytes();
    for (std::size_t bi = 0; bi < plan.blocks.size(); ++bi) {
        const auto& blk = plan.blocks[bi];
        bool last_block = bi + 1 == plan.blocks.size();
        std::vector<std::uint8_t> bytes(scan.begin() + blk.bytes.begin, scan.begin() + blk.bytes.end);
        if (last_block) bytes.insert(bytes.end(), trailer.begin(), trailer.end());

        auto parts = split(bytes);
        if (parts.size() > 255)
            throw PayloadOverflow("block " + std::to_string(bi) + " needs " +
                                  std::to_string(parts.size()) + " partitions");
        for (std::size_t i = 0; i < parts.size(); ++i) {
            Datagram d;
            d.header.msg_type = MsgType::Data;
            d.header.recoverable = plan.recoverable;
            d.header.request_id = request_id;
            d.header.start_mcu = blk.start_mcu;
            d.header.end_mcu = blk.end_mcu;
            d.header.block_num = static_cast<std::uint32_t>(bi);
            d.header.partition_num = static_cast<std::uint8_t>(parts.size());
            d.header.partition_idx = static_cast<std::uint8_t>(i);
            d.header.has_next_partition = i + 1 < parts.size();
            d.header.is_last = last_block && i + 1 == parts.size();
            d.header.payload_len = static_cast<std::uint16_t>(parts[i].size());
            d.payload.assign(parts[i].begin(), parts[i].end());
            set.packets.push_back(std::move(d));
        }
    }
    return set;
}

inline Datagram make_cancel(std::uint32_t request_id) {
    Datagram d;
    d.header.msg_type = MsgType::Cancel;
    d.header.request_id = request_id;
    return d;
}

// Result payload: u8 label count, u32 per label, then the confidence as a
// u32 fixed-point fraction (1e-7 resolution).
inline constexpr std::uint32_t kConfidenceScale = 10'000'000;

inline Datagram make_result(std::uint32_t request_id, const std::vector<std::uint32_t>& labels,
                            double confidence) {
    if (labels.size() > 255)
        throw PayloadOverflow("too many result labels");
    if (confidence < 0.0 || confidence > 1.0)
        throw InvariantViolation("confidence must be in [0, 1]");
    Datagram d;
    d.header.msg_type = MsgType::Result;
    d.header.request_id = request_id;
    d.payload.push_back(static_cast<std::uint8_t>(labels.size()));
    for (std::uint32_t l : labels) {
        d.payload.push_back(static_cast<std::uint8_t>(l >> 24));
        d.payload.push_back(static_cast<std::uint8_t>(l >> 16));
        d.payload.push_back(static_cast<std::uint8_t>(l >> 8));
        d.payload.push_back(static_cast<std::uint8_t>(l));
    }
    auto q = static_cast<std::uint32_t>(std::lround(confidence * kConfidenceScale));
    d.payload.push_back(static_cast<std::uint8_t>(q >> 24));
    d.payload.push_back(static_cast<std::uint8_t>(q >> 16));
    d.payload.push_back(static_cast<std::uint8_t>(q >> 8));
    d.payload.push_back(static_cast<std::uint8_t>(q));
    d.header.payload_len = static_cast<std::uint16_t>(d.payload.size());
    return d;
}

struct ResultPayload {
    std::vector<std::uint32_t> labels;
    double confidence = 0.0;
};

inline ResultPayload decode_result(const Datagram& d) {
    if (d.header.msg_type != MsgType::Result)
        throw InvariantViolation("not a result packet");
    if (d.payload.size() < 5)
        throw InvariantViolation("result payload too short");
    ResultPayload r;
    std::size_t n = d.payload[0];
    if (d.payload.size() != 1 + 4 * n + 4)
        throw InvariantViolation("result payload length mismatch");
    auto get32 = [&](std::size_t at) -> std::uint32_t {
        return (std::uint32_t{d.payload[at]} << 24) | (std::uint32_t{d.payload[at + 1]} << 16) |
               (std::uint32_t{d.payload[at + 2]} << 8) | std::uint32_t{d.payload[at + 3]};
    };
    for (std::size_t i = 0; i < n; ++i) r.labels.push_back(get32(1 + 4 * i));
    r.confidence = static_cast<double>(get32(1 + 4 * n)) / kConfidenceScale;
    return r;
}

// Concatenate payloads in transmission order; with zero loss this is the
// original file.
inline std::vector<std::uint8_t> concat_payloads(const RequestDatagramSet& set) {
    std::vector<std::uint8_t> out;
    for (const auto& d : set.packets) out.insert(out.end(), d.payload.begin(), d.payload.end());
    return out;
}

}  // namespace loti
