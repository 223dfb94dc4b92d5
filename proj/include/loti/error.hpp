#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace loti {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// --- JPEG parsing / scanning ---

// Image is not baseline sequential Huffman (SOF0, single interleaved scan).
class NotBaseline : public Error {
public:
    using Error::Error;
};

// Input ended before a complete segment or scan could be read.
class TruncatedFile : public Error {
public:
    explicit TruncatedFile(const std::string& what, std::size_t offset)
        : Error(what + " at byte " + std::to_string(offset)), offset(offset) {}
    std::size_t offset;
};

class MalformedMarker : public Error {
public:
    MalformedMarker(const std::string& what, std::uint8_t marker, std::size_t offset)
        : Error(what + " (marker 0xFF" + to_hex(marker) + " at byte " + std::to_string(offset) + ")"),
          marker(marker),
          offset(offset) {}
    std::uint8_t marker;
    std::size_t offset;

private:
    static std::string to_hex(std::uint8_t b) {
        static const char* digits = "0123456789ABCDEF";
        return {digits[b >> 4], digits[b & 0xF]};
    }
};

// Entropy-coded data could not be decoded (invalid Huffman code, premature
// end, or a marker where data was expected).
class CorruptScan : public Error {
public:
    CorruptScan(const std::string& what, std::size_t mcu_index, std::size_t bit_offset)
        : Error(what + " (MCU " + std::to_string(mcu_index) + ", bit " + std::to_string(bit_offset) + ")"),
          mcu_index(mcu_index),
          bit_offset(bit_offset) {}
    std::size_t mcu_index;
    std::size_t bit_offset;
};

// --- Wire protocol ---

class BadMagic : public Error {
public:
    using Error::Error;
};

class UnsupportedVersion : public Error {
public:
    using Error::Error;
};

// A packet header violates a structural invariant; the message names it.
class InvariantViolation : public Error {
public:
    using Error::Error;
};

class HeaderTooLarge : public Error {
public:
    using Error::Error;
};

class PayloadOverflow : public Error {
public:
    using Error::Error;
};

// --- Reassembly ---

class StaleRequest : public Error {
public:
    using Error::Error;
};

// Scan's Huffman tables lack a code the recovery MCU needs.
class MissingTable : public Error {
public:
    using Error::Error;
};

// --- Traces / calibration ---

class EmptyTrace : public Error {
public:
    using Error::Error;
};

class UnsatisfiableRequirement : public Error {
public:
    using Error::Error;
};

class IdMismatch : public Error {
public:
    using Error::Error;
};

class ShortVector : public Error {
public:
    using Error::Error;
};

// --- Simulator ---

class TraceMiss : public Error {
public:
    using Error::Error;
};

class ConfigInvalid : public Error {
public:
    using Error::Error;
};

}  // namespace loti
