#pragma once

// Delimited text output. Numbers are written in shortest round-trip form so
// stored values keep full double precision.

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "wes/error.hpp"

namespace wes::io {

inline std::string format_full(double value) {
    if (std::isnan(value)) return "nan";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

/// printf-style %.6g; used for console output.
inline std::string format_short(double value) {
    char buf[64];
    const int n = std::snprintf(buf, sizeof buf, "%.6g", value);
    return std::string(buf, static_cast<std::size_t>(n));
}

inline double round_significant(double value, int digits = 6) {
    if (!std::isfinite(value) || value == 0.0) return value;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*e", digits - 1, value);
    return std::strtod(buf, nullptr);
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw NumericError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw NumericError("cannot open " + path.string() + " for writing");
    return out;
}

inline void close_checked(std::ofstream& out, const std::filesystem::path& path) {
    out.close();
    if (!out) throw NumericError("write failed for " + path.string());
}

/// Columnar table: one header row, then one line per sample, tab separated.
inline void write_columns(const std::filesystem::path& path, std::span<const std::string> headers,
                          std::span<const std::vector<double>> columns) {
    if (headers.size() != columns.size()) throw ConfigError("write_columns: header/column count mismatch");
    const std::size_t rows = columns.empty() ? 0 : columns.front().size();
    for (const auto& c : columns) {
        if (c.size() != rows) throw ConfigError("write_columns: columns differ in length");
    }
    auto out = open_for_write(path);
    for (std::size_t k = 0; k < headers.size(); ++k) out << (k ? "\t" : "") << headers[k];
    out << '\n';
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t k = 0; k < columns.size(); ++k) out << (k ? "\t" : "") << format_full(columns[k][r]);
        out << '\n';
    }
    close_checked(out, path);
}

inline std::vector<std::string> split(std::string_view line, char delim) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(delim, start);
        fields.emplace_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return fields;
}

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

}  // namespace wes::io
