#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace bner {

/// Shortest-safe round-trip text for a double: 17 significant digits, "NA" for NaN.
inline std::string format_number(double v) {
    if (std::isnan(v)) return "NA";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace bner
