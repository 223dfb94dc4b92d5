#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "loti/bitstream.hpp"
#include "loti/error.hpp"
#include "loti/jpeg.hpp"
#include "loti/wire.hpp"

namespace loti {

// Block mode is the normative recovery: any block with a missing packet is
// discarded whole, so bridging is byte concatenation. Bit mode additionally
// salvages the decodable MCU prefix of partially received blocks and splices
// the rest with a bit-level shift.
enum class RecoveryMode { Block, Bit };

// Where the stand-in MCUs for lost spans go: appended at the image tail
// (keeps surviving MCUs spatially coherent despite DC drift) or inserted at
// the loss site.
enum class RecoveryPlacement { Tail, InPlace };

enum class RecoveryOutcome { Intact, Recovered, HeaderLost, Unrecoverable };

struct RecoveryOptions {
    RecoveryMode mode = RecoveryMode::Block;
    RecoveryPlacement placement = RecoveryPlacement::Tail;
};

struct RecoveredJpeg {
    std::vector<std::uint8_t> bytes;
    std::uint32_t lost_mcu_total = 0;
    double loss_fraction = 0.0;
    RecoveryOutcome outcome = RecoveryOutcome::HeaderLost;
    std::uint32_t mcu_count_expected = 0;
    std::uint32_t mcus_survived = 0;
};

struct BitCode {
    std::uint32_t code = 0;
    int len = 0;
};

// Entropy codes for one minimal stand-in MCU: per data unit a zero DC delta
// plus end-of-block. Falls back to the smallest magnitude category present
// when an optimized table dropped the zero-delta code.
inline std::vector<BitCode> make_recovery_mcu(const JpegImage& meta) {
    std::vector<BitCode> out;
    auto one_block = [&](const Component& c) {
        const HuffmanTable& dc = meta.dc_tables[c.dc_table_id];
        const HuffmanTable& ac = meta.ac_tables[c.ac_table_id];
        if (!dc.present || !ac.present)
            throw MissingTable("scan tables missing for component " + std::to_string(c.id));
        std::uint32_t code;
        int len;
        if (dc.code_for(0, code, len)) {
            out.push_back({code, len});
        } else {
            bool found = false;
            for (int cat = 1; cat <= 11 && !found; ++cat) {
                if (dc.code_for(static_cast<std::uint8_t>(cat), code, len)) {
                    out.push_back({code, len});
                    out.push_back({1u << (cat - 1), cat});  // smallest positive delta
                    found = true;
                }
            }
            if (!found) throw MissingTable("DC table has no usable category");
        }
        if (!ac.code_for(0x00, code, len))
            throw MissingTable("AC table has no end-of-block code");
        out.push_back({code, len});
    };

    if (meta.components.size() == 1) {
        one_block(meta.components[0]);
    } else {
        for (const auto& c : meta.components) {
            int blocks = c.h_sampling * c.v_sampling;
            for (int i = 0; i < blocks; ++i) one_block(c);
        }
    }
    return out;
}

// Splice two entropy streams: the suffix (which starts at an MCU boundary)
// is shifted onto the prefix's final bit and the result is re-stuffed.
inline std::vector<std::uint8_t> bridge_bits(std::span<const std::uint8_t> prefix,
                                             std::size_t prefix_bits,
                                             std::span<const std::uint8_t> suffix,
                                             std::size_t suffix_bits) {
    StuffingBitWriter w;
    w.append_bit_range(prefix, 0, prefix_bits);
    w.append_bit_range(suffix, 0, suffix_bits);
    return w.take();
}

namespace detail {

struct BlockExtent {
    std::uint32_t mcus = 0;                 // MCUs fully decodable from the buffer
    std::uint64_t end_bit = 0;              // code end of the last decodable MCU
    std::vector<std::uint64_t> boundaries;  // start bit of each decoded MCU
    bool truncated = false;
};

// Structure-only rescan of a block that begins on a byte and MCU boundary.
// Code lengths do not depend on DC predictor values, so a cold start is
// exact. Stops cleanly at the first MCU that would read past the buffer.
inline BlockExtent scan_block_extent(const JpegImage& meta, std::span<const std::uint8_t> bytes,
                                     std::uint32_t first_mcu, std::uint32_t max_mcus) {
    BlockExtent ext;
    ScanBitReader r(bytes);
    const std::uint32_t R = meta.restart_interval;
    for (std::uint32_t m = 0; m < max_mcus; ++m) {
        ScanBitReader save = r;
        try {
            std::uint32_t global = first_mcu + m;
            if (R && m > 0 && global % R == 0) {
                r.skip_to_byte();
                r.take_restart();
            }
            ext.boundaries.push_back(r.bit_offset());
            r.context_mcu = global;
            skip_mcu(r, meta);
        } catch (const CorruptScan&) {
            ext.truncated = true;
            ext.boundaries.resize(ext.mcus);
            r = save;
            break;
        }
        ++ext.mcus;
        ext.end_bit = r.bit_offset();
    }
    return ext;
}

}  // namespace detail

// Receiver-side accumulator for one request's datagrams. Single-owner; out
// of order delivery and duplicates are fine.
class ReassemblyState {
public:
    explicit ReassemblyState(std::uint32_t request_id) : request_id_(request_id) {}

    std::uint32_t request_id() const { return request_id_; }
    bool saw_last() const { return saw_last_; }
    bool finalized() const { return finalized_; }

    // Timeout instant in caller-defined microseconds; finalize(now) gates on
    // it when the terminating packet never arrived.
    void set_deadline(std::int64_t deadline_us) { deadline_us_ = deadline_us; }

    void ingest(const PacketHeader& h, std::span<const std::uint8_t> payload) {
        if (finalized_) throw StaleRequest("request already finalized");
        if (h.request_id != request_id_)
            throw InvariantViolation("datagram belongs to another request");
        validate_header(h);
        if (h.msg_type != MsgType::Data)
            throw InvariantViolation("reassembly accepts only data packets");
        if (payload.size() != h.payload_len)
            throw InvariantViolation("payload length mismatch");

        recoverable_ = h.recoverable;
        if (h.is_jpeg_header) {
            header_partitions_ = h.partition_num;
            header_parts_.try_emplace(h.partition_idx,
                                      std::vector<std::uint8_t>(payload.begin(), payload.end()));
            return;
        }
        auto& blk = blocks_[h.block_num];
        blk.start_mcu = h.start_mcu;
        blk.end_mcu = h.end_mcu;
        blk.partition_num = h.partition_num;
        blk.parts.try_emplace(h.partition_idx,
                              std::vector<std::uint8_t>(payload.begin(), payload.end()));
        if (h.is_last) {
            saw_last_ = true;
            last_block_num_ = h.block_num;
        }
    }

    void ingest(const Datagram& d) { ingest(d.header, d.payload); }

    // Gated variant: refuses to run while the request could still complete.
    RecoveredJpeg finalize(std::int64_t now_us, const RecoveryOptions& opts = {}) {
        if (!saw_last_ && deadline_us_ && now_us < *deadline_us_)
            throw Error("finalize before deadline on an incomplete request");
        return finalize(opts);
    }

    RecoveredJpeg finalize(const RecoveryOptions& opts = {}) {
        if (finalized_) throw StaleRequest("request already finalized");
        finalized_ = true;

        RecoveredJpeg out;
        if (!header_complete()) {
            out.outcome = RecoveryOutcome::HeaderLost;
            return out;
        }
        std::vector<std::uint8_t> header_bytes;
        for (auto& [idx, part] : header_parts_)
            header_bytes.insert(header_bytes.end(), part.begin(), part.end());
        JpegImage meta = parse_jpeg_header(header_bytes);
        out.mcu_count_expected = meta.mcu_count_expected;

        const std::uint32_t total_blocks = known_block_count();
        bool any_missing = !saw_last_;
        for (std::uint32_t bn = 0; bn < total_blocks && !any_missing; ++bn) {
            auto it = blocks_.find(bn);
            if (it == blocks_.end() || !it->second.complete()) any_missing = true;
        }

        if (!any_missing) {
            out.outcome = RecoveryOutcome::Intact;
            out.bytes = std::move(header_bytes);
            for (auto& [bn, blk] : blocks_) {
                auto bytes = blk.concat();
                out.bytes.insert(out.bytes.end(), bytes.begin(), bytes.end());
            }
            out.mcus_survived = meta.mcu_count_expected;
            return out;
        }
        if (!recoverable_) {
            out.outcome = RecoveryOutcome::Unrecoverable;
            out.lost_mcu_total = meta.mcu_count_expected;
            out.loss_fraction = 1.0;
            return out;
        }

        try {
            assemble(meta, header_bytes, opts, out);
        } catch (const MissingTable&) {
            out.bytes.clear();
            out.outcome = RecoveryOutcome::Unrecoverable;
            out.lost_mcu_total = meta.mcu_count_expected;
            out.mcus_survived = 0;
            out.loss_fraction = 1.0;
        }
        return out;
    }

private:
    struct BlockAcc {
        std::uint32_t start_mcu = 0;
        std::uint32_t end_mcu = 0;
        std::uint8_t partition_num = 0;
        std::map<std::uint8_t, std::vector<std::uint8_t>> parts;

        bool complete() const { return partition_num && parts.size() == partition_num; }

        std::vector<std::uint8_t> concat() const {
            std::vector<std::uint8_t> out;
            for (auto& [idx, p] : parts) out.insert(out.end(), p.begin(), p.end());
            return out;
        }

        // Contiguous partitions from the front (usable prefix of the block).
        std::vector<std::uint8_t> prefix() const {
            std::vector<std::uint8_t> out;
            std::uint8_t want = 0;
            for (auto& [idx, p] : parts) {
                if (idx != want) break;
                out.insert(out.end(), p.begin(), p.end());
                ++want;
            }
            return out;
        }
    };

    bool header_complete() const {
        if (!header_partitions_) return false;
        return header_parts_.size() == header_partitions_;
    }

    std::uint32_t known_block_count() const {
        if (saw_last_) return last_block_num_ + 1;
        std::uint32_t max_bn = 0;
        for (auto& [bn, blk] : blocks_) max_bn = std::max(max_bn, bn);
        return blocks_.empty() ? 0 : max_bn + 1;
    }

    // Split the final block's payload into scan part and trailer (EOI plus
    // anything after). Inside entropy data, 0xFF is only ever followed by
    // 0x00 or RSTn, so the first other marker is the trailer.
    static std::size_t trailer_start(const std::vector<std::uint8_t>& payload) {
        for (std::size_t i = 0; i + 1 < payload.size(); ++i) {
            if (payload[i] != 0xFF) continue;
            std::uint8_t next = payload[i + 1];
            if (next == 0x00 || (next >= 0xD0 && next <= 0xD7)) {
                ++i;
                continue;
            }
            return i;
        }
        return payload.size();
    }

    void assemble(const JpegImage& meta, const std::vector<std::uint8_t>& header_bytes,
                  const RecoveryOptions& opts, RecoveredJpeg& out) {
        const std::uint32_t E = meta.mcu_count_expected;
        const std::uint32_t R = meta.restart_interval;

        StuffingBitWriter w;
        std::uint32_t survived = 0;
        std::uint32_t next_mcu = 0;       // next MCU index the output still needs
        std::uint32_t since_marker = 0;   // MCUs emitted since the last RST (restart images)
        std::uint32_t lost_total = 0;
        std::vector<BitCode> rec_codes;   // built on first use
        std::vector<std::uint8_t> trailer;

        auto emit_recovery = [&](std::uint32_t count) {
            if (!count) return;
            if (rec_codes.empty()) rec_codes = make_recovery_mcu(meta);
            for (std::uint32_t i = 0; i < count; ++i) {
                if (R && since_marker == R) {
                    w.put_restart(0);
                    since_marker = 0;
                }
                for (const auto& c : rec_codes) w.put_bits(c.code, c.len);
                if (R) ++since_marker;
            }
        };
        auto append_range = [&](std::span<const std::uint8_t> bytes, std::uint64_t bit_end) {
            if (w.byte_aligned() && bit_end % 8 == 0) {
                w.append_stuffed_bytes(bytes.subspan(0, bit_end / 8));
            } else if (w.byte_aligned()) {
                w.append_stuffed_bytes(bytes.subspan(0, bit_end / 8));
                w.append_bit_range(bytes, (bit_end / 8) * 8, bit_end);
            } else {
                w.append_bit_range(bytes, 0, bit_end);
            }
        };

        for (auto& [bn, blk] : blocks_) {
            if (bn >= known_block_count()) break;
            bool is_final_block = saw_last_ && bn == last_block_num_;
            std::uint32_t span = blk.end_mcu - blk.start_mcu + 1;

            // gap of fully missing blocks before this one
            if (blk.start_mcu > next_mcu) {
                std::uint32_t gap = blk.start_mcu - next_mcu;
                lost_total += gap;
                if (opts.placement == RecoveryPlacement::InPlace) emit_recovery(gap);
                next_mcu = blk.start_mcu;
            }

            if (blk.complete()) {
                auto payload = blk.concat();
                std::size_t scan_len = payload.size();
                if (is_final_block) {
                    std::size_t t = trailer_start(payload);
                    trailer.assign(payload.begin() + static_cast<std::ptrdiff_t>(t), payload.end());
                    scan_len = t;
                }
                std::span<const std::uint8_t> scan_part(payload.data(), scan_len);

                if (R && since_marker == R) {
                    w.put_restart(0);
                    since_marker = 0;
                }
                if (is_final_block) {
                    auto ext = detail::scan_block_extent(meta, scan_part, blk.start_mcu, span);
                    append_range(scan_part, ext.end_bit);
                    survived += ext.mcus;
                    lost_total += span - ext.mcus;
                    if (R && ext.mcus) {
                        since_marker = ext.mcus % R;
                        if (since_marker == 0) since_marker = R;
                    }
                    if (opts.placement == RecoveryPlacement::InPlace)
                        emit_recovery(span - ext.mcus);
                } else {
                    append_range(scan_part, scan_part.size() * 8);
                    survived += span;
                    since_marker = 0;  // non-final blocks end with their trailing RST
                }
                next_mcu = blk.end_mcu + 1;
            } else {
                std::uint32_t salvage = 0;
                if (opts.mode == RecoveryMode::Bit) {
                    auto pre = blk.prefix();
                    if (!pre.empty()) {
                        auto ext = detail::scan_block_extent(meta, pre, blk.start_mcu, span);
                        // Keep either everything that decoded (ends at a code
                        // boundary) or a whole number of restart intervals
                        // (ends just past a surviving RST marker).
                        std::uint32_t take = ext.mcus;
                        std::uint64_t end_bit = ext.end_bit;
                        if (R && !(take == span && !ext.truncated)) {
                            take = (take / R) * R;
                            if (take && take < ext.mcus) end_bit = ext.boundaries[take];
                        }
                        if (take) {
                            if (R && since_marker == R) {
                                w.put_restart(0);
                                since_marker = 0;
                            }
                            append_range(pre, end_bit);
                            salvage = take;
                            survived += take;
                            if (R) {
                                bool ends_after_rst = take < ext.mcus;
                                since_marker = ends_after_rst ? 0 : (take % R ? take % R : R);
                            }
                        }
                    }
                }
                lost_total += span - salvage;
                if (opts.placement == RecoveryPlacement::InPlace) emit_recovery(span - salvage);
                next_mcu = blk.end_mcu + 1;
            }
        }

        if (next_mcu < E) {
            std::uint32_t gap = E - next_mcu;
            lost_total += gap;
            if (opts.placement == RecoveryPlacement::InPlace) emit_recovery(gap);
            next_mcu = E;
        }
        if (opts.placement == RecoveryPlacement::Tail) emit_recovery(lost_total);

        auto scan_out = w.take();
        if (R) renumber_restarts(scan_out);

        out.bytes = header_bytes;
        out.bytes.insert(out.bytes.end(), scan_out.begin(), scan_out.end());
        if (trailer.empty()) {
            out.bytes.push_back(0xFF);
            out.bytes.push_back(0xD9);
        } else {
            out.bytes.insert(out.bytes.end(), trailer.begin(), trailer.end());
        }
        out.outcome = RecoveryOutcome::Recovered;
        out.lost_mcu_total = lost_total;
        out.mcus_survived = survived;
        out.loss_fraction = E ? static_cast<double>(lost_total) / E : 0.0;
    }

    // Surviving restarts keep their positions but the sequence numbers must
    // run 0..7 cyclically over the spliced stream.
    static void renumber_restarts(std::vector<std::uint8_t>& scan) {
        std::uint32_t seq = 0;
        for (std::size_t i = 0; i + 1 < scan.size();) {
            if (scan[i] != 0xFF) {
                ++i;
                continue;
            }
            std::uint8_t next = scan[i + 1];
            if (next == 0x00) {
                i += 2;
            } else if (next >= 0xD0 && next <= 0xD7) {
                scan[i + 1] = static_cast<std::uint8_t>(0xD0 + (seq++ & 7));
                i += 2;
            } else {
                ++i;
            }
        }
    }

    std::uint32_t request_id_;
    std::uint8_t header_partitions_ = 0;
    std::map<std::uint8_t, std::vector<std::uint8_t>> header_parts_;
    std::map<std::uint32_t, BlockAcc> blocks_;
    bool saw_last_ = false;
    std::uint32_t last_block_num_ = 0;
    bool recoverable_ = true;
    bool finalized_ = false;
    std::optional<std::int64_t> deadline_us_;
};

}  // namespace loti
