#pragma once

// Minimal RFC-4180 CSV writing.

#include <charconv>
#include <ostream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace pnav::csv {

/// Quotes a field when it contains a comma, quote, CR or LF; inner quotes are doubled.
inline std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

/// Shortest decimal text that reads back to the same double.
inline std::string number(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    if (r.ec != std::errc()) return "nan";
    return {buf, r.ptr};
}

inline std::string number(long long v) { return std::to_string(v); }
inline std::string number(unsigned long long v) { return std::to_string(v); }
inline std::string number(int v) { return std::to_string(v); }
inline std::string number(std::size_t v) { return std::to_string(v); }

/// Writes one record terminated by CRLF.
inline void write_row(std::ostream& os, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) os << ',';
        os << escape(fields[i]);
    }
    os << "\r\n";
}

}  // namespace pnav::csv
