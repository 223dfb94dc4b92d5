#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "loti/error.hpp"

namespace loti::csv {

inline std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t at = 0;
    while (true) {
        std::size_t comma = line.find(',', at);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(at));
            break;
        }
        out.push_back(line.substr(at, comma - at));
        at = comma + 1;
    }
    return out;
}

inline double to_double(std::string_view s, const std::string& context) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw Error("bad numeric field '" + std::string(s) + "' in " + context);
    return v;
}

inline long to_long(std::string_view s, const std::string& context) {
    long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw Error("bad integer field '" + std::string(s) + "' in " + context);
    return v;
}

// Reads all non-empty lines; strips \r line endings.
inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

}  // namespace loti::csv
