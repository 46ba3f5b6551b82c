#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace fedleak::jsonfmt {

/// Decimal with 9 significant digits; the report convention for all floats.
/// Infinities serialize as the string "inf" / "-inf".
inline std::string g9(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

/// g9 wrapped for a JSON value position: infinities become quoted strings.
inline std::string g9_json(double v) {
    if (std::isinf(v)) return v > 0 ? "\"inf\"" : "\"-inf\"";
    return g9(v);
}

inline std::string escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string str(const std::string& s) { return "\"" + escape(s) + "\""; }

}  // namespace fedleak::jsonfmt
