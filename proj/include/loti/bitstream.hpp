#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "loti/error.hpp"

namespace loti {

// Bit reader over JPEG entropy-coded bytes, MSB first. 0xFF00 byte stuffing
// is skipped transparently when a byte is exhausted, so bit_offset() never
// lands inside a stuffed zero byte. Restart markers are never read as data;
// they are consumed explicitly with take_restart().
class ScanBitReader {
public:
    explicit ScanBitReader(std::span<const std::uint8_t> scan, std::size_t start_bit = 0)
        : scan_(scan), pos_(start_bit / 8), bit_(static_cast<int>(start_bit % 8)) {}

    // Raw bit offset (stuffing included) of the next unread data bit.
    std::size_t bit_offset() const { return pos_ * 8 + bit_; }
    bool byte_aligned() const { return bit_ == 0; }
    bool at_end() const { return pos_ >= scan_.size(); }

    // Bytes left including the partially consumed one.
    std::size_t bytes_left() const { return pos_ >= scan_.size() ? 0 : scan_.size() - pos_; }

    // Set by the caller so decode errors can name the MCU being scanned.
    std::size_t context_mcu = 0;

    int read_bit() {
        if (pos_ >= scan_.size())
            throw CorruptScan("entropy data ended prematurely", context_mcu, bit_offset());
        int b = (scan_[pos_] >> (7 - bit_)) & 1;
        if (++bit_ == 8) advance_byte();
        return b;
    }

    std::uint32_t read_bits(int n) {
        std::uint32_t v = 0;
        for (int i = 0; i < n; ++i) v = (v << 1) | static_cast<std::uint32_t>(read_bit());
        return v;
    }

    // Discard pad bits up to the next byte boundary.
    void skip_to_byte() {
        if (bit_ != 0) advance_byte();
    }

    bool at_restart() const {
        return bit_ == 0 && pos_ + 1 < scan_.size() && scan_[pos_] == 0xFF &&
               scan_[pos_ + 1] >= 0xD0 && scan_[pos_ + 1] <= 0xD7;
    }

    // Consume an RSTn marker at the current (byte-aligned) position.
    int take_restart() {
        if (!at_restart())
            throw CorruptScan("expected restart marker", context_mcu, bit_offset());
        int n = scan_[pos_ + 1] - 0xD0;
        pos_ += 2;
        return n;
    }

private:
    void advance_byte() {
        bit_ = 0;
        if (scan_[pos_] == 0xFF) {
            // A data 0xFF must carry a stuffed 0x00. Anything else means we
            // decoded our way into a marker.
            if (pos_ + 1 < scan_.size() && scan_[pos_ + 1] == 0x00) {
                pos_ += 2;
                return;
            }
            throw CorruptScan("unstuffed 0xFF in entropy data", context_mcu, pos_ * 8);
        }
        ++pos_;
    }

    std::span<const std::uint8_t> scan_;
    std::size_t pos_;
    int bit_;
};

// Bit writer that re-applies JPEG byte stuffing: every completed 0xFF data
// byte is followed by 0x00. Markers bypass stuffing.
class StuffingBitWriter {
public:
    bool byte_aligned() const { return nbits_ == 0; }

    void put_bit(int b) {
        acc_ = static_cast<std::uint8_t>((acc_ << 1) | (b & 1));
        if (++nbits_ == 8) flush_byte();
    }

    // MSB-first emission of the low `n` bits of `code`.
    void put_bits(std::uint32_t code, int n) {
        for (int i = n - 1; i >= 0; --i) put_bit(static_cast<int>((code >> i) & 1));
    }

    // Fast path for pre-stuffed scan bytes; only valid on a byte boundary.
    void append_stuffed_bytes(std::span<const std::uint8_t> bytes) {
        if (nbits_ != 0)
            throw Error("append_stuffed_bytes requires byte alignment");
        out_.insert(out_.end(), bytes.begin(), bytes.end());
    }

    // Copy the data bits [bit_from, bit_to) out of a stuffed source stream,
    // re-stuffing on the way out. Offsets are raw (stuffing included); the
    // range must not contain restart markers.
    void append_bit_range(std::span<const std::uint8_t> src, std::size_t bit_from, std::size_t bit_to) {
        ScanBitReader r(src, bit_from);
        while (r.bit_offset() < bit_to) put_bit(r.read_bit());
    }

    // 1-fill to the next byte boundary (JPEG pad convention).
    void pad_with_ones() {
        while (nbits_ != 0) put_bit(1);
    }

    void put_restart(int n) {
        pad_with_ones();
        out_.push_back(0xFF);
        out_.push_back(static_cast<std::uint8_t>(0xD0 + (n & 7)));
    }

    std::size_t size_bytes() const { return out_.size(); }

    std::vector<std::uint8_t> take() {
        pad_with_ones();
        return std::move(out_);
    }

private:
    void flush_byte() {
        out_.push_back(acc_);
        if (acc_ == 0xFF) out_.push_back(0x00);
        acc_ = 0;
        nbits_ = 0;
    }

    std::vector<std::uint8_t> out_;
    std::uint8_t acc_ = 0;
    int nbits_ = 0;
};

}  // namespace loti
