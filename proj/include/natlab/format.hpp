#pragma once

#include <charconv>
#include <string>

namespace natlab {

// Shortest round-trip decimal form; stable across runs of one build, so
// CSV/JSON artifacts can be compared byte for byte.
inline std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace natlab
